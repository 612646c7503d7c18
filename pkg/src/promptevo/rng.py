"""Seeded random stream with a platform-stable bit sequence.

Bits come from the PCG64 (PCG XSL-RR 128/64) bit generator seeded through
``numpy.random.SeedSequence``; both are fixed, documented algorithms whose
output does not depend on the numpy version. All transforms to floats,
normals and integers are defined here rather than borrowed from numpy's
``Generator`` methods, whose streams are not version-stable.

    uniform  = (raw >> 11) * 2**-53                     in [0, 1)
    normal   = Box-Muller on two uniforms, u1 mapped to (0, 1]
    integer  = floor(uniform * n)
"""
from __future__ import annotations

import numpy as np

_INV_2_53 = 1.0 / 9007199254740992.0


class Stream:
    def __init__(self, seed: int, *key: int):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
        self._bits = np.random.PCG64(ss)

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(n), dtype=np.uint64).reshape(-1)

    def uniform(self, n: int = 1, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return low + (high - low) * u

    def uniform1(self, low: float = 0.0, high: float = 1.0) -> float:
        return float(self.uniform(1, low, high)[0])

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform(m)
        u2 = self.uniform(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2.0 * np.pi * u2), rad * np.sin(2.0 * np.pi * u2)])
        return z[:n]

    def integers(self, n: int, high: int) -> np.ndarray:
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        out = np.arange(n)
        if n < 2:
            return out
        u = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = min(int(u[n - 1 - i] * (i + 1)), i)
            out[i], out[j] = out[j], out[i]
        return out
