"""PCG32 random number generator (PCG-XSH-RR 64/32).

The generator follows the reference ``pcg32_srandom_r`` / ``pcg32_random_r``
construction exactly, so a stream seeded with ``(seed, stream)`` yields the
same 32-bit words as any other conforming PCG32 implementation.

Bulk draws are vectorised with LCG jump-ahead: the state after ``k`` steps is
``A_k * s + C_k (mod 2**64)``, and the tables ``A``, ``C`` are built by
doubling, so a block of ``n`` outputs costs ``O(log n)`` numpy passes.

Derived distributions:

* ``uniform``: 53-bit doubles from two words, ``((a >> 5) * 2**26 + (b >> 6)) / 2**53``.
* ``normal``: Box-Muller on pairs of those doubles; each pair yields the
  cosine sample followed by the sine sample.
* ``randbelow``: ``pcg32_boundedrand_r`` rejection sampling.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NegativeStdError

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_U64 = np.uint64


class Rng:
    """Seeded PCG32 stream."""

    def __init__(self, seed: int, stream: int = 54) -> None:
        self.seed = int(seed)
        self.stream = int(stream)
        self.inc = ((self.stream << 1) | 1) & _MASK64
        self.state = 0
        self._step()
        self.state = (self.state + (self.seed & _MASK64)) & _MASK64
        self._step()

    def _step(self) -> int:
        old = self.state
        self.state = (old * _MULT + self.inc) & _MASK64
        return old

    @staticmethod
    def _output(old: int) -> int:
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def next_u32(self) -> int:
        return self._output(self._step())

    def spawn(self, stream: int) -> "Rng":
        """Independent generator on another stream, seeded from this one."""
        seed = (self.next_u32() << 32) | self.next_u32()
        return Rng(seed, stream)

    def u32(self, n: int) -> np.ndarray:
        """``n`` consecutive 32-bit outputs as a uint32 array."""
        n = int(n)
        if n <= 0:
            return np.zeros(0, dtype=np.uint32)
        mult = np.zeros(n, dtype=np.uint64)
        add = np.zeros(n, dtype=np.uint64)
        mult[0] = 1
        size = 1
        # jump constants for `size` steps, kept as python ints
        a_k, c_k = _MULT, self.inc
        while size < n:
            take = min(size, n - size)
            mult[size:size + take] = mult[:take] * _U64(a_k)
            add[size:size + take] = add[:take] * _U64(a_k) + _U64(c_k)
            size += take
            c_k = (a_k * c_k + c_k) & _MASK64
            a_k = (a_k * a_k) & _MASK64
        old = mult * _U64(self.state) + add
        last = int(old[-1])
        self.state = (last * _MULT + self.inc) & _MASK64
        xorshifted = (((old >> _U64(18)) ^ old) >> _U64(27)).astype(np.uint32)
        rot = (old >> _U64(59)).astype(np.uint32)
        left = (np.uint32(32) - rot) & np.uint32(31)
        return (xorshifted >> rot) | (xorshifted << left)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Float64 samples in ``[low, high)``."""
        n = int(np.prod(shape, dtype=np.int64))
        words = self.u32(2 * n).astype(np.uint64)
        hi = words[0::2] >> _U64(5)
        lo = words[1::2] >> _U64(6)
        u = (hi * _U64(67108864) + lo).astype(np.float64) / 9007199254740992.0
        return (low + (high - low) * u).reshape(shape)

    def uniform24(self, shape=()) -> np.ndarray:
        """Cheap float64 samples in ``[0, 1)`` with 24-bit resolution, one word each."""
        n = int(np.prod(shape, dtype=np.int64))
        return ((self.u32(n) >> np.uint32(8)).astype(np.float64) / 16777216.0).reshape(shape)

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise NegativeStdError(f"std must be >= 0, got {std}")
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform((2 * pairs,))
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(theta)
        z[1::2] = radius * np.sin(theta)
        return (mean + std * z[:n]).reshape(shape)

    def randbelow(self, bound: int) -> int:
        bound = int(bound)
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 32) - bound) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(int(n)))
        for i in range(len(perm) - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)

    def shuffle(self, items) -> np.ndarray:
        items = np.asarray(items)
        return items[self.permutation(len(items))]
