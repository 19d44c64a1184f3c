"""Reproducible random streams: xoshiro256** seeded through splitmix64.

Both generators are fully specified integer algorithms, so a given seed yields
the same stream on every platform. Uniforms use the top 53 bits shifted to the
open interval ``(0, 1)``; Gaussians come from Box-Muller pairs (cosine branch
first, then sine).
"""

from __future__ import annotations

import numba
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(output, new_state)``."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31), state


def derive_seed(seed: int, index: int) -> int:
    """Per-member seed: splitmix64 output at state ``seed + index``."""
    return splitmix64((int(seed) + int(index)) & MASK64)[0]


@numba.njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.size):
        s0 = s[0]
        s1 = s[1]
        s2 = s[2]
        s3 = s[3]
        x = s1 * np.uint64(5)
        x = (x << np.uint64(7)) | (x >> np.uint64(57))
        out[i] = x * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        s[0] = s0
        s[1] = s1
        s[2] = s2
        s[3] = s3


class Rng:
    """xoshiro256** generator; the state is four 64-bit words."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        words = []
        st = self.seed
        for _ in range(4):
            out, st = splitmix64(st)
            words.append(out)
        self._state = np.array(words, dtype=np.uint64)

    @property
    def state(self) -> tuple[int, ...]:
        return tuple(int(w) for w in self._state)

    def next_u64(self, size: int) -> np.ndarray:
        out = np.empty(int(size), dtype=np.uint64)
        _fill_u64(self._state, out)
        return out

    def uniform(self, size: int) -> np.ndarray:
        bits = self.next_u64(size) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, size: int) -> np.ndarray:
        size = int(size)
        npairs = (size + 1) // 2
        u = self.uniform(2 * npairs).reshape(npairs, 2)
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((npairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:size]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normal(rows * cols).reshape(rows, cols)

    def integers(self, high: int, size: int) -> np.ndarray:
        """Uniform integers in ``[0, high)`` by 128-bit multiply-shift (Lemire, no rejection)."""
        x = self.next_u64(size)
        return np.array([(int(v) * high) >> 64 for v in x], dtype=np.int64)
