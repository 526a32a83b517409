"""Time the hot kernels under the numba and the pure-numpy backends.

    python benchmarks/bench_kernels.py [--size 256] [--rows 20000] [--trees 5] [--repeat 3]

Each kernel is warmed up once (numba compiles on first call) and then timed
``--repeat`` times; the best time is reported. Results of both backends are
compared as they are timed.
"""
import argparse
import time

import numpy as np

from demboost import _jit, terrain
from demboost.gbtree import GbtParams, train_arrays
from demboost.raster import Grid, GridHeader


def best_of(fn, repeat):
    fn()
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def make_dem(size, seed):
    rng = np.random.default_rng(seed)
    z = np.cumsum(np.cumsum(rng.normal(size=(size, size)), 0), 1) * 0.1
    return Grid(GridHeader(size, size, 0.0, 0.0, 30.0), z)


def make_rows(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 11))
    y = 2.0 * (X[:, 1] > 0) + np.sin(X[:, 2]) + 0.1 * rng.normal(size=n)
    return X, y


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--trees", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    dem = make_dem(args.size, 0)
    X, y = make_rows(args.rows, 1)
    cases = {
        f"terrain.derive_all {args.size}x{args.size}": lambda: terrain.derive_all(dem),
        f"train exact {args.rows} rows x {args.trees} trees": lambda: train_arrays(
            X, y, GbtParams(n_estimators=args.trees, early_stopping_rounds=0)
        )[0].predict(X),
        f"train hist {args.rows} rows x {args.trees} trees": lambda: train_arrays(
            X, y, GbtParams(n_estimators=args.trees, early_stopping_rounds=0, tree_method="hist")
        )[0].predict(X),
    }
    if not _jit.HAVE_NUMBA:
        print("numba not installed; only the numpy backend can run")
    print(f"{'kernel':45s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}  agree")
    for name, fn in cases.items():
        row = {}
        for backend in ("numba", "numpy"):
            if backend == "numba" and not _jit.HAVE_NUMBA:
                continue
            _jit.set_backend(backend)
            row[backend] = best_of(fn, args.repeat)
        _jit.set_backend("numba" if _jit.HAVE_NUMBA else "numpy")
        t_np, out_np = row["numpy"]
        if "numba" in row:
            t_nb, out_nb = row["numba"]
            agree = _agree(out_nb, out_np)
            print(f"{name:45s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}  {agree}")
        else:
            print(f"{name:45s} {'-':>10s} {t_np:10.4f} {'-':>8s}  -")


def _agree(a, b):
    if isinstance(a, dict):
        return all(np.allclose(a[k].data, b[k].data, rtol=0, atol=1e-12, equal_nan=True) for k in a)
    return bool(np.allclose(a, b, rtol=0, atol=1e-9))


if __name__ == "__main__":
    main()
