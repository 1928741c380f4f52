"""Server-side implementation of the framed denoiser protocol.

Frame: magic ``BDP1`` | opcode u8 | payload_len u32 LE | payload.
Opcodes: 0 HELLO, 1 DENOISE, 2 VJP, 3 RESULT, 4 ERROR. Audio payloads are
little-endian float32. A request carrying non-finite values is answered with
an ERROR frame; the server never crashes on malformed numerics.
"""

from __future__ import annotations

import struct

import numpy as np

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


class FrameError(RuntimeError):
    """Unrecoverable framing problem (bad magic, short read)."""


def pack_frame(opcode: int, payload: bytes = b"") -> bytes:
    return _HEADER.pack(MAGIC, opcode, len(payload)) + payload


def parse_header(header: bytes) -> tuple[int, int]:
    if len(header) != HEADER_LEN:
        raise FrameError("truncated frame header")
    magic, opcode, length = _HEADER.unpack(header)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    return opcode, length


def hello_payload(sample_rate: int, supported_length: int, sigma_data: float) -> bytes:
    return _HELLO.pack(sample_rate, supported_length, sigma_data)


def parse_denoise(payload: bytes) -> tuple[float, np.ndarray]:
    if len(payload) < _SIGMA_N.size:
        raise ValueError("malformed DENOISE payload")
    sigma, n = _SIGMA_N.unpack_from(payload)
    blob = payload[_SIGMA_N.size:]
    if len(blob) != 4 * n:
        raise ValueError("DENOISE payload length mismatch")
    return float(sigma), np.frombuffer(blob, dtype="<f4").astype(np.float64)


def parse_vjp(payload: bytes) -> tuple[float, np.ndarray, np.ndarray]:
    if len(payload) < _SIGMA_N.size:
        raise ValueError("malformed VJP payload")
    sigma, n = _SIGMA_N.unpack_from(payload)
    blob = payload[_SIGMA_N.size:]
    if len(blob) != 8 * n:
        raise ValueError("VJP payload length mismatch")
    x = np.frombuffer(blob[: 4 * n], dtype="<f4").astype(np.float64)
    v = np.frombuffer(blob[4 * n:], dtype="<f4").astype(np.float64)
    return float(sigma), x, v


def result_payload(values: np.ndarray) -> bytes:
    data = np.ascontiguousarray(values, dtype="<f4")
    return _U32.pack(data.size) + data.tobytes()


def error_payload(message: str) -> bytes:
    return message.encode("utf-8")
