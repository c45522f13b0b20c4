"""Seed-derived random streams.

All randomness in the package flows from one integer seed through named
derivation paths, e.g. ``stream(seed, "sample", 17)``. Each path maps to an
independent counter-based generator (Philox), so streams can be created in
any order, from any thread, and still reproduce bit-for-bit. Path strings
are hashed with FNV-1a rather than Python's ``hash`` so derivation does not
depend on PYTHONHASHSEED.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a(data: bytes, h: int = _FNV_OFFSET) -> int:
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def derive_key(seed: int, *path: int | str) -> tuple[int, int]:
    """Collapse a derivation path into a two-word Philox key."""
    h = _FNV_OFFSET
    for part in path:
        if isinstance(part, str):
            h = _fnv1a(b"s" + part.encode("utf-8"), h)
        else:
            h = _fnv1a(b"i" + int(part).to_bytes(16, "big", signed=True), h)
    return seed & _MASK64, h


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Independent generator for this (seed, path) pair."""
    key = np.array(derive_key(seed, *path), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
