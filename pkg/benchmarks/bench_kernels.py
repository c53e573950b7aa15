"""Time each numba kernel against its numpy twin, plus one end-to-end fit.

    python benchmarks/bench_kernels.py [--n 600] [--repeat 5]

The kernel table calls the ``*_numba`` / ``*_numpy`` functions directly, so it
is independent of ``SGMFS_NUMBA``. The fit row runs ``sgmfs.fit`` in two
subprocesses, one per backend.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from sgmfs import kernels

FIT_SNIPPET = """
import time, numpy as np
from sgmfs import Dataset, SgmfsConfig, fit, make_split
from sgmfs._accel import backend_name
rng = np.random.default_rng(0)
x = rng.normal(size=({d}, {n}))
y = (x[:5].T @ rng.normal(size=(5, 6)) > 0).astype(float)
ds = Dataset(x, y)
split = make_split(ds, 0.2, 0)
fit(ds, split, SgmfsConfig(max_iters=2))  # warm-up / jit
t = time.perf_counter()
fit(ds, split, SgmfsConfig(max_iters=20, tol=1e-12))
print(backend_name(), time.perf_counter() - t)
"""


def best_of(fn, args, repeat):
    fn(*args)  # compile / warm caches
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(n, rng):
    d, c, k = 64, 10, 10
    pts = rng.normal(size=(n, d))
    m = rng.random((n, n))
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 0)
    num, den = rng.random((n, n)), rng.random((n, n))
    labels = (rng.random((n, c)) < 0.3).astype(np.int64)
    nbrs = np.argsort(rng.random((n, n)), axis=1)[:, :k].astype(np.int64)
    counts = kernels.neighbor_label_counts_numpy(nbrs, labels)
    scores = rng.random((n, c))
    return [
        ("pairwise_sq_dists", (pts, pts)),
        ("multiplicative_step", (m, num, den, 1e-12)),
        ("neighbor_label_counts", (nbrs, labels)),
        ("count_histograms", (counts, labels, k)),
        ("ranking_loss_rows", (scores, labels)),
        ("average_precision_rows", (scores, labels)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=600, help="samples")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-fit", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>9}")
    for name, call_args in kernel_cases(args.n, rng):
        fast = best_of(getattr(kernels, name + "_numba"), call_args, args.repeat)
        slow = best_of(getattr(kernels, name + "_numpy"), call_args, args.repeat)
        print(f"{name:<24}{fast * 1e3:>12.3f}{slow * 1e3:>12.3f}{slow / fast:>9.2f}")

    if args.skip_fit:
        return
    print(f"\nfit, d=100, n={args.n}, 20 iterations")
    for flag in ("1", "0"):
        env = dict(os.environ, SGMFS_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, "-c", FIT_SNIPPET.format(d=100, n=args.n)],
            capture_output=True, text=True, env=env, check=True,
        ).stdout.split()
        print(f"  {out[0]:<8}{float(out[1]):8.3f} s")


if __name__ == "__main__":
    main()
