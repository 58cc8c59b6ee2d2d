"""Seedable randomness with labeled stream splitting.

All randomness in the package flows from a 64-bit root seed. Independent
child streams are derived by hashing a string label into the root seed:

    child_seed = splitmix64(splitmix64(root ^ fnv1a64(label)))

and each child stream is a numpy PCG64 generator, which numpy guarantees to
be reproducible across platforms for a fixed seed. Components never share a
generator; they derive their own from (seed, label).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a64(label: str) -> int:
    h = 0xCBF29CE484222325
    for b in label.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def derive_seed(root_seed: int, label: str = "") -> int:
    """Derive the child seed for a labeled stream (see module docstring)."""
    return _splitmix64(_splitmix64((root_seed & _MASK64) ^ _fnv1a64(label)))


def make_rng(seed: int, label: str = "") -> np.random.Generator:
    """PCG64 generator for the given root seed and stream label."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, label)))
