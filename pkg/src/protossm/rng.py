"""Portable pseudo-random generator.

The generator is xorshift64* (Vigna, 2016) seeded through SplitMix64.  Every
draw is defined with integer arithmetic on 64-bit words, so a given seed yields
the same stream on any platform and in any language that reproduces the
recipe below:

* seeding: ``state = splitmix64(seed)``; a zero state is replaced by the
  SplitMix64 golden-ratio constant.
* ``next_u64``: ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27`` then
  ``x * 0x2545F4914F6CDD1D mod 2**64``.
* ``random``: top 53 bits of ``next_u64`` scaled by ``2**-53``.
* ``integers(n)``: rejection sampling on ``next_u64`` (no modulo bias).
* ``standard_normal``: Box-Muller on pairs ``(1 - random(), random())``.
* ``split``: a child generator seeded with ``next_u64()`` of the parent.

Normal deviates go through ``math.log``/``math.cos``; libms agree on these to
the last bit on all mainstream platforms but that is not guaranteed by IEEE.
"""

import math

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MULT = 0x2545F4914F6CDD1D


def splitmix64(x):
    """One SplitMix64 output for input word ``x``."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShiftRng:
    """xorshift64* generator with splittable seeding."""

    __slots__ = ("_state",)

    def __init__(self, seed=0):
        state = splitmix64(int(seed) & MASK64)
        self._state = state if state else _GOLDEN

    def next_u64(self):
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self._state = x
        return (x * _MULT) & MASK64

    def split(self):
        return XorShiftRng(self.next_u64())

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def integers(self, n):
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError(f"integers() needs n > 0, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def uniform(self, low, high, size):
        count = int(np.prod(size))
        out = np.array([self.random() for _ in range(count)], dtype=np.float64)
        return (low + (high - low) * out).reshape(size)

    def standard_normal(self, size):
        count = int(np.prod(size))
        out = np.empty(count + (count & 1), dtype=np.float64)
        for i in range(0, count, 2):
            u1 = 1.0 - self.random()
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            out[i + 1] = r * math.sin(2.0 * math.pi * u2)
        return out[:count].reshape(size)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def sample(self, n, k):
        """``k`` distinct indices from ``range(n)`` via a partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n} without replacement")
        idx = list(range(n))
        for i in range(k):
            j = i + self.integers(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]
