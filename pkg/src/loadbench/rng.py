"""xoshiro256** generator, seeded through splitmix64.

Pinned instead of numpy's default generators so that a seed reproduces the
same schedule on every platform and in any other implementation.
"""

from __future__ import annotations

import numpy as np

_M64 = (1 << 64) - 1
_TWO_M53 = 1.0 / (1 << 53)


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _M64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return x, z ^ (z >> 31)


def label_hash(label: str) -> int:
    """FNV-1a 64 of the UTF-8 label."""
    h = 0xCBF29CE484222325
    for b in label.encode():
        h = ((h ^ b) * 0x100000001B3) & _M64
    return h


def mix_seed(seed: int, index: int) -> int:
    """Derive an independent 64-bit seed from ``seed`` and a run index."""
    _, out = splitmix64((seed ^ ((index * 0xD1B54A32D192ED03) & _M64)) & _M64)
    return out


class SeededRng:
    """xoshiro256** stream identified by (seed, label).

    Distinct labels give unrelated streams from one seed, so e.g. changing
    the sample seed never moves issue times.
    """

    __slots__ = ("seed", "label", "_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int, label: str = ""):
        self.seed = seed & _M64
        self.label = label
        x = self.seed ^ label_hash(label)
        state = []
        for _ in range(4):
            x, out = splitmix64(x)
            state.append(out)
        if not any(state):
            state[0] = 1
        self._s0, self._s1, self._s2, self._s3 = state

    @classmethod
    def from_state(cls, state: tuple[int, int, int, int], label: str = "") -> "SeededRng":
        rng = cls(0, label)
        rng.state = state
        return rng

    @property
    def state(self) -> tuple[int, int, int, int]:
        return (self._s0, self._s1, self._s2, self._s3)

    @state.setter
    def state(self, value: tuple[int, int, int, int]) -> None:
        self._s0, self._s1, self._s2, self._s3 = (v & _M64 for v in value)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        r = (s1 * 5) & _M64
        result = ((((r << 7) | (r >> 57)) & _M64) * 9) & _M64
        t = (s1 << 17) & _M64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _M64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def u64_array(self, n: int) -> np.ndarray:
        """``n`` consecutive outputs, as a uint64 array."""
        out = np.empty(n, dtype=np.uint64)
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        M = _M64
        for i in range(n):
            r = (s1 * 5) & M
            out[i] = ((((r << 7) | (r >> 57)) & M) * 9) & M
            t = (s1 << 17) & M
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & M
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return out

    def random(self) -> float:
        """Uniform on [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _TWO_M53

    def uniform_open_closed(self, n: int) -> np.ndarray:
        """``n`` uniforms on (0, 1]; zero is excluded."""
        return ((self.u64_array(n) >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection on the top bits."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if n == 1:
            self.next_u64()
            return 0
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def integers_below(self, n: int, count: int) -> np.ndarray:
        """``count`` unbiased draws from [0, n) as int64."""
        if n < 1:
            raise ValueError("n must be >= 1")
        saved = self.state
        raw = self.u64_array(count)
        limit = ((1 << 64) // n) * n
        if limit < (1 << 64) and (raw >= np.uint64(limit)).any():
            # rare; replay through the scalar path so both agree draw for draw
            self.state = saved
            return np.array([self.randbelow(n) for _ in range(count)], dtype=np.int64)
        return (raw % np.uint64(n)).astype(np.int64)

    def jumped(self, index: int) -> "SeededRng":
        return SeededRng(mix_seed(self.seed, index), self.label)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed:#x}, label={self.label!r})"
