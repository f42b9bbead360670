"""Stable 64-bit FNV-1a hash.

Used everywhere a reproducible fingerprint is needed: log partition
assignment, dedup fingerprints, synthesized doc ids, vocabulary hashes.
Fixed algorithm so test expectations hold across platforms and runs
(Python's builtin hash() is salted per process).
"""

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a over bytes (str is encoded as UTF-8)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def fnv1a64_hex(data: bytes | str) -> str:
    """Hex form, zero-padded to 16 chars; handy as a synthetic id."""
    return f"{fnv1a64(data):016x}"
