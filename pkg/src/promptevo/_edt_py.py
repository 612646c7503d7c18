"""Pure-Python squared Euclidean distance transform (lower-envelope of parabolas).

Reference fallback for ``_edt_ext``; both must return identical arrays.
"""
from __future__ import annotations

import numpy as np

# Finite stand-in for +inf so envelope intersections never see inf - inf.
BIG = 1e20


def _envelope_1d(f: list[float]) -> list[float]:
    n = len(f)
    d = [0.0] * n
    v = [0] * n
    z = [0.0] * (n + 1)
    k = 0
    v[0] = 0
    z[0] = -BIG
    z[1] = BIG
    for q in range(1, n):
        fq = f[q] + q * q
        while True:
            p = v[k]
            s = (fq - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
                continue
            break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = BIG
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        d[q] = (q - p) * (q - p) + f[p]
    return d


def edt_sq(target: np.ndarray) -> np.ndarray:
    """Squared distance from every pixel to the nearest pixel where ``target`` is set."""
    t = np.asarray(target, dtype=bool)
    h, w = t.shape
    out = np.where(t, 0.0, BIG)
    for i in range(h):
        out[i, :] = _envelope_1d(out[i, :].tolist())
    for j in range(w):
        out[:, j] = _envelope_1d(out[:, j].tolist())
    return out
