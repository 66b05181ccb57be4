"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--dim 1024] [--repeat 5] [--number 2000]

Also checks that both backends agree on every input before timing.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from sada import _backend


def cases(dim: int, rng):
    vecs = [rng.standard_normal(dim) for _ in range(4)]
    coeffs = (1.0, -5.0 / 600, -5.0 / 600, 2.0 / 300)
    times = np.array([0.5, 0.42, 0.34, 0.26])
    k, d = 4, dim
    means = rng.standard_normal((k, d))
    logw = np.log(np.full(k, 1.0 / k))
    var = np.full(k, 0.05)
    x = rng.standard_normal(d)
    err, curv = rng.standard_normal(dim), rng.standard_normal(dim)
    return {
        "lincomb": lambda m: m.lincomb(coeffs, vecs),
        "lagrange_weights": lambda m: m.lagrange_weights(times, 0.21),
        "gmm_eps": lambda m: m.gmm_eps(x, 0.7, 0.71, logw, means, var),
        "criterion_stats": lambda m: m.criterion_stats(err, curv),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=2000)
    args = ap.parse_args(argv)

    py = _backend.load("python")
    try:
        cy = _backend.load("cython")
    except ImportError:
        print("compiled extension not built; only the fallback is available")
        cy = None
    rng = np.random.default_rng(0)
    print(f"dim={args.dim}  best of {args.repeat} x {args.number} calls")
    print(f"{'kernel':>18} {'python us':>10} {'cython us':>10} {'ratio':>7} {'max |diff|':>11}")
    for name, fn in cases(args.dim, rng).items():
        t_py = min(timeit.repeat(lambda: fn(py), repeat=args.repeat, number=args.number))
        us_py = 1e6 * t_py / args.number
        if cy is None:
            print(f"{name:>18} {us_py:>10.2f} {'-':>10} {'-':>7} {'-':>11}")
            continue
        a, b = fn(py), fn(cy)
        diff = max(float(np.max(np.abs(np.asarray(u) - np.asarray(v))))
                   for u, v in zip(np.atleast_1d(a) if not isinstance(a, tuple) else a,
                                   np.atleast_1d(b) if not isinstance(b, tuple) else b))
        t_cy = min(timeit.repeat(lambda: fn(cy), repeat=args.repeat, number=args.number))
        us_cy = 1e6 * t_cy / args.number
        print(f"{name:>18} {us_py:>10.2f} {us_cy:>10.2f} {us_py / us_cy:>7.2f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
