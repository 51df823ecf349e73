"""Compare the compiled and numpy kernel backends.

Run with ``python benchmarks/bench_kernels.py``. Both backends are imported
directly, so the ``HGCD_PURE_PYTHON`` switch does not matter here.
"""

import argparse
import timeit

import numpy as np

from hgcd import _kernels_py

try:
    from hgcd import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def cases(rng):
    x = rng.standard_normal((20_000, 128))
    c = rng.standard_normal((7, 128))
    fixed = np.where(rng.random(len(x)) < 0.15, rng.integers(0, 4, len(x)), -1)
    labels = rng.integers(0, 7, len(x))
    return {
        "hungarian 7x7": lambda m: m.hungarian(rng.random((7, 7))),
        "hungarian 100x100": lambda m: m.hungarian(rng.random((100, 100))),
        "hungarian 300x300": lambda m: m.hungarian(rng.random((300, 300))),
        "assign_nearest 20000x128, k=7": lambda m: m.assign_nearest(x, c, fixed),
        "centroid_update 20000x128, k=7": lambda m: m.centroid_update(x, labels, 7),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled else [])
    if _compiled is None:
        print("compiled extension not available; timing the numpy backend only")
    print(f"{'kernel':<34}" + "".join(f"{name:>12}" for name, _ in backends) + ("     speed-up" if _compiled else ""))
    for label, fn in cases(rng).items():
        times = []
        for _, mod in backends:
            number = 3
            times.append(min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number)
        row = f"{label:<34}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>12.1f}x"
        print(row)


if __name__ == "__main__":
    main()
