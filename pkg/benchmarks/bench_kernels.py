"""Time the compiled and pure-Python squared distance transforms on random masks.

    python benchmarks/bench_kernels.py --sizes 32 64 128 --repeat 20
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from promptevo import _edt_py

try:
    from promptevo import _edt_ext
except ImportError:
    _edt_ext = None


def bench(fn, target: np.ndarray, repeat: int) -> float:
    """Best-of-``repeat`` wall time of one call, in milliseconds."""
    return 1e3 * min(timeit.repeat(lambda: fn(target), number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--density", type=float, default=0.3, help="fraction of target pixels")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    print(f"{'size':>6} {'python_ms':>10} {'compiled_ms':>12} {'speedup':>8}")
    for n in args.sizes:
        target = rng.random((n, n)) < args.density
        t_py = bench(_edt_py.edt_sq, target, args.repeat)
        if _edt_ext is None:
            print(f"{n:>6} {t_py:>10.3f} {'n/a':>12} {'n/a':>8}")
            continue
        assert np.array_equal(_edt_ext.edt_sq(target), _edt_py.edt_sq(target))
        t_c = bench(_edt_ext.edt_sq, target, args.repeat)
        print(f"{n:>6} {t_py:>10.3f} {t_c:>12.3f} {t_py / t_c:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
