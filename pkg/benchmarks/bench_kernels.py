"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--sizes 500 2000] [--dims 1 2] [--repeat 5]

Prints one row per (kernel, d, N) with the median wall time of each backend,
the speedup, and whether the outputs agree bit for bit.
"""
import argparse
import math
import timeit

import numpy as np

from lowertail import _fallback

try:
    from lowertail import _kernels
except ImportError:
    _kernels = None


def _case(N, d, seed=0):
    rng = np.random.default_rng(seed)
    coords = np.ascontiguousarray(rng.random((N, d)))
    G = max(1, int(math.floor((4 * N) ** (1.0 / d))))
    r = 2.0 / N ** (1.0 / d)
    return coords, G, r


def _kernels_for(mod, coords, G, r):
    order, start = mod.build_grid(coords, G)
    return {
        "build_grid": lambda: mod.build_grid(coords, G),
        "ball_counts": lambda: mod.ball_counts(coords, G, order, start, coords, r),
        "pairs_within": lambda: mod.pairs_within(coords, G, order, start, r),
        "knn_dists(k=3)": lambda: mod.knn_dists(coords, G, order, start, coords, 3, True),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 2000])
    ap.add_argument("--dims", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
        return
    print(f"{'kernel':<16}{'d':>3}{'N':>7}{'compiled ms':>14}{'python ms':>12}{'speedup':>10}  identical")
    for d in args.dims:
        for N in args.sizes:
            coords, G, r = _case(N, d)
            fast = _kernels_for(_kernels, coords, G, r)
            slow = _kernels_for(_fallback, coords, G, r)
            for name in fast:
                tf = min(timeit.repeat(fast[name], number=1, repeat=args.repeat)) * 1e3
                ts = min(timeit.repeat(slow[name], number=1, repeat=max(1, args.repeat // 2))) * 1e3
                same = _same(fast[name](), slow[name]())
                print(f"{name:<16}{d:>3}{N:>7}{tf:>14.3f}{ts:>12.3f}{ts / tf:>10.1f}  {same}")


if __name__ == "__main__":
    main()
