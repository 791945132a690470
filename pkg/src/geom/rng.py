"""Documented, portable random source for sampling and randomized checks.

The generator is the 64-bit linear congruential recurrence

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64

seeded with ``state = seed mod 2**64`` followed by one warm-up step. A
uniform draw on the open interval (0, 1) uses the top 53 bits:
``((state >> 11) + 0.5) / 2**53``. Normal draws use Box-Muller on two
consecutive uniforms (cosine branch only). Any implementation of this
recurrence reproduces the sample points of the verification suite.
"""

from __future__ import annotations

import math

import numpy as np

_A = 6364136223846793005
_C = 1442695040888963407
_MASK = (1 << 64) - 1


class Lcg64:
    def __init__(self, seed: int = 0):
        self.state = seed & _MASK
        self.next_u64()

    def next_u64(self) -> int:
        self.state = (_A * self.state + _C) & _MASK
        return self.state

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = ((self.next_u64() >> 11) + 0.5) / 9007199254740992.0
        return lo + (hi - lo) * u

    def in_box(self, lower, upper) -> np.ndarray:
        """One point drawn uniformly from the box, coordinate by coordinate."""
        return np.array([self.uniform(lo, hi) for lo, hi in zip(lower, upper)])

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)])
