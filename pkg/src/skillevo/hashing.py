"""64-bit FNV-1a hashing used for content digests and virtual-mode draws."""

from __future__ import annotations

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def hash_unit(data: bytes) -> float:
    """Map bytes to a float in [0, 1) via FNV-1a / 2**64."""
    # float(h) can round up to 2**64 for h close to the top of the range
    value = fnv1a_64(data) / 2.0**64
    return value if value < 1.0 else 0.9999999999999999


def digest_hex(data: bytes) -> str:
    return f"{fnv1a_64(data):016x}"


def digest_text(text: str) -> str:
    return digest_hex(text.encode("utf-8"))
