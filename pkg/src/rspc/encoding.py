"""Canonical byte encodings and SHA-256 digests.

Every digest in the package goes through :func:`encode`: each field is
length-prefixed (4-byte big-endian length) and written in declared order.
Integers are encoded big-endian in the minimum number of bytes (at least one).
"""
from __future__ import annotations

import hashlib
from functools import lru_cache

ZERO_DIGEST = bytes(32)


def _field_bytes(value) -> bytes:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value)
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, int):
        if value < 0:
            raise ValueError("negative integers have no canonical encoding")
        return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, (tuple, list)):
        return encode(*value)
    raise TypeError(f"cannot encode {type(value).__name__}")


def encode(*fields) -> bytes:
    out = bytearray()
    for value in fields:
        raw = _field_bytes(value)
        out += len(raw).to_bytes(4, "big")
        out += raw
    return bytes(out)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def digest(*fields) -> bytes:
    """SHA-256 over the canonical encoding of ``fields``."""
    return hashlib.sha256(encode(*fields)).digest()


def digest_int(*fields) -> int:
    return int.from_bytes(digest(*fields), "big")


@lru_cache(maxsize=1 << 16)
def home_partition(address: bytes, T: int) -> int:
    """``H(address) mod T`` -- the homing rule shared by routing and snapshots."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return int.from_bytes(hashlib.sha256(address).digest(), "big") % T


def node_id(label) -> bytes:
    """Deterministic 32-byte identifier for tests, demos and generated nodes."""
    return digest("node", label)
