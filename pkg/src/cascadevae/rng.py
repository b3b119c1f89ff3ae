"""Deterministic random streams on a counter-based splitmix64 generator.

Every stochastic operation in the package draws from a :class:`Prng` so runs
are bit-reproducible: the generator is integer-only (no libm in the stream
itself) and Gaussian variates come from Box-Muller, which consumes a fixed
number of uniforms per draw. Sub-streams are derived by hashing a text label
into the seed, so e.g. the init / noise / shuffle / metrics streams of a run
never interleave.
"""

from __future__ import annotations

import numpy as np

_U64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_INV_2_53 = 2.0 ** -53


def _mix64(x: int) -> int:
    x &= _U64
    x = ((x ^ (x >> 30)) * _MIX_A) & _U64
    x = ((x ^ (x >> 27)) * _MIX_B) & _U64
    return x ^ (x >> 31)


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


class Prng:
    """splitmix64 output stream; state is just (seed, counter)."""

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _U64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Prng(seed={self.seed}, counter={self.counter})"

    @property
    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    def child(self, label: str) -> "Prng":
        """Independent stream derived from this stream's seed and a label."""
        return Prng(_mix64(self.seed ^ _fnv1a(label.encode("utf-8"))))

    def _raw(self, count: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        x = idx * np.uint64(_GAMMA) + np.uint64(self.seed)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX_A)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX_B)
        return x ^ (x >> np.uint64(31))

    def uniforms(self, count: int) -> np.ndarray:
        """count doubles uniform on [0, 1)."""
        return (self._raw(count) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def _uniforms_open(self, count: int) -> np.ndarray:
        # (0, 1]: safe under log for Box-Muller
        return ((self._raw(count) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53

    def normals(self, shape) -> np.ndarray:
        """Standard normal array via Box-Muller, filled in row-major order."""
        if isinstance(shape, int):
            shape = (shape,)
        total = 1
        for s in shape:
            total *= int(s)
        if total == 0:
            return np.zeros(shape, dtype=np.float64)
        pairs = (total + 1) // 2
        u1 = self._uniforms_open(pairs)
        u2 = self.uniforms(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = (2.0 * np.pi) * u2
        out = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return out[:total].reshape(shape)

    def integers(self, bound: int, count: int) -> np.ndarray:
        """count ints uniform on [0, bound)."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        vals = (self.uniforms(count) * bound).astype(np.int64)
        return np.minimum(vals, bound - 1)

    def randint(self, bound: int) -> int:
        return int(self.integers(bound, 1)[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n), one uniform per swap."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniforms(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            if j > i:
                j = i
            perm[i], perm[j] = perm[j], perm[i]
        return perm
