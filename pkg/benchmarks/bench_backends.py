"""Compare the numba and numpy kernels on representative sizes.

    python benchmarks/bench_backends.py [--rows 200000] [--dim 512] [--pairs 2000000]

Reports best-of-N wall time per kernel and the largest absolute difference
between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from cone_sampler import kernels
from cone_sampler._accel import HAS_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--dim", type=int, default=512)
    ap.add_argument("--pairs", type=int, default=2_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    centers = rng.standard_normal((args.rows, args.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    normals = rng.standard_normal((args.rows, args.dim))
    cosines = rng.uniform(0.4, 1.0, args.rows)
    ia = rng.integers(0, args.rows, args.pairs)
    ib = rng.integers(0, args.rows, args.pairs)

    cases = {
        "rotate_rows": lambda b: kernels.rotate_rows(centers, normals, cosines, backend=b)[0],
        "pair_dots": lambda b: kernels.pair_dots(centers, ia, ib, backend=b),
    }
    # compile once outside the timed region
    kernels.rotate_rows(centers[:2], normals[:2], cosines[:2], backend="numba")
    kernels.pair_dots(centers, ia[:2], ib[:2], backend="numba")

    print(f"{'kernel':<12} {'numpy s':>9} {'numba s':>9} {'speedup':>8} {'max diff':>10}")
    for name, fn in cases.items():
        t_np, out_np = best_of(lambda: fn("numpy"), args.repeat)
        t_nb, out_nb = best_of(lambda: fn("numba"), args.repeat)
        diff = float(np.abs(out_np - out_nb).max())
        print(f"{name:<12} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
