"""Deterministic 64-bit seed expansion for replicate streams.

A splitmix64 step over ``base + (index + 1) * golden`` so that any
implementation with 64-bit wrapping arithmetic reproduces the same stream
assignments from the same base seed.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def expand_seed(base_seed: int, index: int) -> int:
    """Derive the ``index``-th child seed from ``base_seed``."""
    z = (base_seed + (index + 1) * _GOLDEN) & _MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK
    z ^= z >> 31
    return z
