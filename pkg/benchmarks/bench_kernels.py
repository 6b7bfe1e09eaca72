"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from riskqr import _kernels_py
from riskqr.risk import make_tau_grid

try:
    from riskqr import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def cases(rng):
    taus = make_tau_grid(32)
    pred = rng.normal(size=(128, 32))
    tgt = rng.normal(size=(128, 32))
    costs = rng.uniform(size=128)
    big = rng.uniform(size=10_000)
    grid = np.linspace(-0.5, 1.5, 512)
    pts = rng.uniform(-1, 1, size=(10, 2))
    return {
        "qr_loss_batch B=128 N=32": lambda k: k.qr_loss_batch(pred, tgt, taus, 1.0, 1 / 32 ** 2),
        "kde_pdf B=128 grid=512": lambda k: k.kde_pdf(costs, 0.05, grid),
        "kde_pdf B=10000 grid=512": lambda k: k.kde_pdf(big, 0.05, grid),
        "lidar_scan 10 entities": lambda k: k.lidar_scan(0.1, 0.2, 0.3, pts, 16, 3.0),
    }


def best_time(fn, repeat):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.Timer(fn).repeat(repeat, n)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="also write results here")
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; only the numpy timings are shown", file=sys.stderr)

    rows = []
    for name, call in cases(np.random.default_rng(0)).items():
        t_py = best_time(lambda: call(_kernels_py), args.repeat)
        t_c = best_time(lambda: call(_kernels_c), args.repeat) if _kernels_c else float("nan")
        rows.append((name, t_py * 1e6, t_c * 1e6, t_py / t_c))
    print(f"{'kernel':28s} {'numpy us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for name, a, b, s in rows:
        print(f"{name:28s} {a:10.1f} {b:10.1f} {s:8.2f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "numpy_us", "cython_us", "speedup"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
