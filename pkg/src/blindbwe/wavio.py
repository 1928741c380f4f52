"""Minimal WAV reading and writing: 16/24-bit PCM and 32-bit float.

Multichannel files are downmixed to mono by averaging on read. Writing is
fully deterministic (fixed header layout), which the pipeline relies on for
byte-identical reruns.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from blindbwe.audio import AudioBuffer

__all__ = ["read_wav", "write_wav"]

_FMT_PCM = 1
_FMT_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


def read_wav(path) -> AudioBuffer:
    """Decode a RIFF/WAVE file into a mono float buffer in [-1, 1]."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise ValueError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _FMT_EXTENSIBLE:
        if len(fmt) < 26:
            raise ValueError(f"{path}: truncated extensible fmt chunk")
        (tag,) = struct.unpack_from("<H", fmt, 24)  # subformat GUID leads with the tag
    if channels < 1:
        raise ValueError(f"{path}: invalid channel count")

    if tag == _FMT_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif tag == _FMT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _FMT_PCM and bits == 32:
        samples = np.frombuffer(data, dtype="<i4").astype(np.float64) / 2147483648.0
    elif tag == _FMT_PCM and bits == 24:
        raw = np.frombuffer(data[: len(data) - len(data) % 3], dtype=np.uint8)
        raw = raw.reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints.astype(np.float64) / 8388608.0
    else:
        raise ValueError(f"{path}: unsupported WAV format (tag={tag}, bits={bits})")

    frames = samples.size // channels
    samples = samples[: frames * channels].reshape(frames, channels)
    mono = samples.mean(axis=1)
    return AudioBuffer(mono, rate)


def write_wav(path, buffer: AudioBuffer, encoding: str = "float32") -> None:
    """Write a mono WAV file; encoding is float32 (default), pcm16, or pcm24."""
    x = buffer.samples
    rate = buffer.sample_rate
    if encoding == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = _FMT_FLOAT, 32
    elif encoding == "pcm16":
        ints = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype("<i2")
        payload = ints.tobytes()
        tag, bits = _FMT_PCM, 16
    elif encoding == "pcm24":
        ints = np.round(np.clip(x, -1.0, 1.0) * 8388607.0).astype(np.int32)
        b = np.empty((ints.size, 3), dtype=np.uint8)
        b[:, 0] = ints & 0xFF
        b[:, 1] = (ints >> 8) & 0xFF
        b[:, 2] = (ints >> 16) & 0xFF
        payload = b.tobytes()
        tag, bits = _FMT_PCM, 24
    else:
        raise ValueError(f"unsupported encoding {encoding!r}")

    block_align = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, rate, rate * block_align, block_align, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    if tag == _FMT_FLOAT:
        chunks += b"fact" + struct.pack("<II", 4, buffer.samples.size)
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        chunks += b"\x00"
    header = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE"
    Path(path).write_bytes(header + chunks)
