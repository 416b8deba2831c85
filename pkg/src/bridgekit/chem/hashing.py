"""Fixed 64-bit mixing used by the fingerprint and WL teachers.

The mixer is the splitmix64 finaliser.  Sequences are folded left to
right starting from ``SEED``; every step adds the golden-ratio increment
before mixing so that zeros still perturb the state.
"""

from __future__ import annotations

from typing import Iterable

MASK64 = (1 << 64) - 1
SEED = 0x9E3779B97F4A7C15
GOLDEN = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    x &= MASK64
    x = ((x ^ (x >> 30)) * M1) & MASK64
    x = ((x ^ (x >> 27)) * M2) & MASK64
    return x ^ (x >> 31)


def mix_many(values: Iterable[int], seed: int = SEED) -> int:
    h = seed & MASK64
    for v in values:
        h = mix64(h ^ ((int(v) + GOLDEN) & MASK64))
    return h
