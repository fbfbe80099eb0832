"""RTTC checkpoint format.

Layout (little-endian):
    magic b"RTTC", version u16, fingerprint (32 raw sha256 bytes), record count u32,
    payload length u64, then per record: name length u16, utf-8 name, rank u8,
    extents u32 * rank, float64 values.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .data import FormatError

MAGIC = b"RTTC"
VERSION = 1
_HEADER = struct.Struct("<4sH32sIQ")


class FingerprintMismatch(ValueError):
    pass


def fingerprint(config_text: str) -> bytes:
    return hashlib.sha256(config_text.encode()).digest()


def to_bytes(tensors: dict[str, np.ndarray], fp: bytes) -> bytes:
    if len(fp) != 32:
        raise ValueError("fingerprint must be 32 bytes")
    body = bytearray()
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode()
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"record {name!r} cannot be encoded")
        body += struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr).tobytes()
    return _HEADER.pack(MAGIC, VERSION, fp, len(tensors), len(body)) + bytes(body)


def from_bytes(buf: bytes, expected_fp: bytes | None = None) -> tuple[dict[str, np.ndarray], bytes]:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated RTTC header")
    magic, version, fp, count, length = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported RTTC version {version}")
    if len(buf) != _HEADER.size + length:
        raise FormatError(f"RTTC length mismatch: header says {_HEADER.size + length} bytes, file has {len(buf)}")
    if expected_fp is not None and fp != expected_fp:
        raise FingerprintMismatch("checkpoint was written for a different configuration")
    out = {}
    pos = _HEADER.size
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n].decode()
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(buf):
                raise FormatError(f"record {name!r} overruns the payload")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise FormatError(f"corrupt RTTC record table: {exc}") from None
    if pos != len(buf):
        raise FormatError("RTTC payload has trailing bytes")
    return out, fp


def save(path, tensors: dict[str, np.ndarray], fp: bytes) -> None:
    Path(path).write_bytes(to_bytes(tensors, fp))


def load(path, expected_fp: bytes | None = None) -> tuple[dict[str, np.ndarray], bytes]:
    return from_bytes(Path(path).read_bytes(), expected_fp)


def state_dict(model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def load_state(model, tensors: dict[str, np.ndarray]) -> None:
    params = model.parameters()
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise ValueError(f"checkpoint does not match model (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        if tensors[name].shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: {tensors[name].shape} vs {p.shape}")
        p.data = tensors[name].copy()
