"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints one row per (kernel, size) with the best wall time of each backend.
"""

import argparse
import time

import numpy as np

from subspace_dp import kernels
from subspace_dp.correlated import mvee_symmetric


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    backends = sorted(kernels.available_backends())
    rng = np.random.default_rng(0)

    cases = []
    for n, d in [(20, 500), (100, 2000)]:
        pts = rng.normal(size=(d, n))
        cases.append((f"pairwise l2  n={n} d={d}",
                      {b: (lambda b=b, pts=pts: kernels.pairwise_max_distance(pts, 2, backend=b)) for b in backends}))
    for n, m in [(10, 40), (40, 120), (80, 200)]:
        pts = rng.normal(size=(m, n))
        cases.append((f"mvee         n={n} m={m}",
                      {b: (lambda b=b, pts=pts: mvee_symmetric(pts, backend=b)) for b in backends}))

    header = f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, fns in cases:
        t = {b: best_of(fn, args.repeat) for b, fn in fns.items()}
        row = f"{label:<28}" + "".join(f"{t[b]:>11.4f}s" for b in backends)
        if len(backends) == 2:
            row += f"{t['python'] / t['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
