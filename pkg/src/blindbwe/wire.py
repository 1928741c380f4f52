"""Framed binary protocol for talking to an external denoiser process.

Frame layout: magic ``BDP1`` (4 bytes) | opcode u8 | payload_len u32 LE |
payload. Opcodes: 0 HELLO, 1 DENOISE, 2 VJP, 3 RESULT, 4 ERROR.

Payloads (all little-endian, audio as float32):
  HELLO    sample_rate u32, supported_length u32, sigma_data f32
  DENOISE  sigma f32, n u32, x (n * f32)
  VJP      sigma f32, n u32, x (n * f32), v (n * f32)
  RESULT   n u32, values (n * f32)
  ERROR    UTF-8 message

The client opens with a HELLO whose fields may be zero (a capability
request); the server answers with a HELLO carrying its actual parameters.
The magic bytes double as the protocol version: anything other than ``BDP1``
is a version mismatch. A request containing non-finite floats must be
answered with an ERROR frame, never a crash.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "MAGIC",
    "OP_HELLO",
    "OP_DENOISE",
    "OP_VJP",
    "OP_RESULT",
    "OP_ERROR",
    "ProtocolError",
    "RemoteDenoiserError",
    "pack_frame",
    "parse_header",
    "HEADER_LEN",
    "pack_hello",
    "unpack_hello",
    "pack_denoise",
    "unpack_denoise",
    "pack_vjp",
    "unpack_vjp",
    "pack_result",
    "unpack_result",
    "pack_error",
    "unpack_error",
]

MAGIC = b"BDP1"
OP_HELLO = 0
OP_DENOISE = 1
OP_VJP = 2
OP_RESULT = 3
OP_ERROR = 4

_HEADER = struct.Struct("<4sBI")
HEADER_LEN = _HEADER.size
_HELLO = struct.Struct("<IIf")
_SIGMA_N = struct.Struct("<fI")
_U32 = struct.Struct("<I")


class ProtocolError(RuntimeError):
    """Malformed frame, short read, or version mismatch."""


class RemoteDenoiserError(RuntimeError):
    """The remote side reported a failure via an ERROR frame."""


def pack_frame(opcode: int, payload: bytes = b"") -> bytes:
    return _HEADER.pack(MAGIC, opcode, len(payload)) + payload


def parse_header(header: bytes) -> tuple[int, int]:
    """Validate a frame header; returns (opcode, payload_len)."""
    if len(header) != HEADER_LEN:
        raise ProtocolError("truncated frame header")
    magic, opcode, length = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolError(
            f"protocol version mismatch: expected {MAGIC!r}, got {magic!r}"
        )
    if opcode > OP_ERROR:
        raise ProtocolError(f"unknown opcode {opcode}")
    return opcode, length


def _f32_bytes(values) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def _f32_array(blob: bytes, n: int, what: str) -> np.ndarray:
    if len(blob) != 4 * n:
        raise ProtocolError(f"{what}: expected {4 * n} payload bytes, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4").astype(np.float64)


def pack_hello(sample_rate: int, supported_length: int, sigma_data: float) -> bytes:
    return _HELLO.pack(sample_rate, supported_length, sigma_data)


def unpack_hello(payload: bytes) -> tuple[int, int, float]:
    if len(payload) != _HELLO.size:
        raise ProtocolError("malformed HELLO payload")
    rate, length, sigma_data = _HELLO.unpack(payload)
    return rate, length, float(sigma_data)


def pack_denoise(sigma: float, x) -> bytes:
    x = np.asarray(x)
    return _SIGMA_N.pack(sigma, x.size) + _f32_bytes(x)


def unpack_denoise(payload: bytes) -> tuple[float, np.ndarray]:
    if len(payload) < _SIGMA_N.size:
        raise ProtocolError("malformed DENOISE payload")
    sigma, n = _SIGMA_N.unpack_from(payload)
    return float(sigma), _f32_array(payload[_SIGMA_N.size:], n, "DENOISE")


def pack_vjp(sigma: float, x, v) -> bytes:
    x = np.asarray(x)
    v = np.asarray(v)
    if x.size != v.size:
        raise ValueError("x and v must have equal lengths")
    return _SIGMA_N.pack(sigma, x.size) + _f32_bytes(x) + _f32_bytes(v)


def unpack_vjp(payload: bytes) -> tuple[float, np.ndarray, np.ndarray]:
    if len(payload) < _SIGMA_N.size:
        raise ProtocolError("malformed VJP payload")
    sigma, n = _SIGMA_N.unpack_from(payload)
    blob = payload[_SIGMA_N.size:]
    if len(blob) != 8 * n:
        raise ProtocolError(f"VJP: expected {8 * n} payload bytes, got {len(blob)}")
    x = _f32_array(blob[: 4 * n], n, "VJP.x")
    v = _f32_array(blob[4 * n:], n, "VJP.v")
    return float(sigma), x, v


def pack_result(values) -> bytes:
    values = np.asarray(values)
    return _U32.pack(values.size) + _f32_bytes(values)


def unpack_result(payload: bytes) -> np.ndarray:
    if len(payload) < _U32.size:
        raise ProtocolError("malformed RESULT payload")
    (n,) = _U32.unpack_from(payload)
    return _f32_array(payload[_U32.size:], n, "RESULT")


def pack_error(message: str) -> bytes:
    return message.encode("utf-8")


def unpack_error(payload: bytes) -> str:
    return payload.decode("utf-8", errors="replace")
