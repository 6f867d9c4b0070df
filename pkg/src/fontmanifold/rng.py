"""Deterministic random number generation.

Every randomized stage of the pipeline (parameter init, reparameterization
noise, shuffles, slider draws, t-SNE init) goes through this one generator
so that a seed fully determines all artifact bytes.

The core stream is SplitMix64 (Steele, Lea & Flood 2014): a 64-bit counter
advanced by the golden-gamma constant and mixed through two xor-shift
multiplies. It is trivially portable and passes BigCrush. Normal draws use
the Box-Muller transform, chosen over ziggurat because it is easy to make
bit-reproducible.
"""
from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class Rng:
    """SplitMix64 stream with uniform, bounded-int and normal draws."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform double in the open interval (0, 1)."""
        # 53 mantissa bits, offset by half an ulp so 0.0 is unreachable.
        return ((self.next_u64() >> 11) + 0.5) * 2.0 ** -53

    def randint(self, bound: int) -> int:
        """Unbiased integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % bound)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % bound

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, spare value cached)."""
        if self._spare_normal is not None:
            value = self._spare_normal
            self._spare_normal = None
            return value
        u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> list[float]:
        return [self.normal() for _ in range(n)]

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates permutation of range(n)."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            order[i], order[j] = order[j], order[i]
        return order

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """First k entries of a Fisher-Yates pass over range(n)."""
        if k > n:
            raise ValueError("cannot sample more items than available")
        return self.permutation(n)[:k]
