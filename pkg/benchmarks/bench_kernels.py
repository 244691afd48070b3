"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from mibench import _pykernels

try:
    from mibench import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    d = rng.standard_normal(19)
    ranks2 = 2 * np.arange(1, 26, dtype=np.int64)
    X = rng.standard_normal((120, 10))
    y = np.where(X[:, 0] + rng.standard_normal(120) > 0, 1.0, -1.0)
    Q = np.ascontiguousarray(np.outer(y, y) * (X @ X.T))

    def smo(impl):
        return impl.smo_solve(Q, y, 10.0, np.zeros(120), -np.ones(120), 1e-10, 10**6)

    return {
        "signflip_count n=19": lambda impl: impl.signflip_count(d, 0.5),
        "signed_rank_counts n=25": lambda impl: impl.signed_rank_counts(ranks2),
        "smo_solve n=120 d=10 c=10": smo,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    impls = {"python": _pykernels}
    if _ckernels is not None:
        impls["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':28s}" + "".join(f"{name:>12s}" for name in impls) + ("   speedup" if len(impls) == 2 else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {name: min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
                 for name, impl in impls.items()}
        row = f"{label:28s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values())
        if len(times) == 2:
            row += f"{times['python'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
