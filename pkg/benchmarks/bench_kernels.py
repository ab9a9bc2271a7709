"""Benchmark the numba kernels against their pure-numpy twins.

Run:
    python benchmarks/bench_kernels.py [--rows 200000] [--repeats 5]

The first numba call includes JIT compilation; it is timed separately and
excluded from the steady-state numbers.
"""

import argparse
import time

import numpy as np

from nutripipe.kernels import numpy_backend
from nutripipe.model import GbtModelConfig, train_gbt

try:
    from nutripipe.kernels import numba_backend
except ImportError:
    numba_backend = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def bench_split_scan(rows, repeats):
    rng = np.random.default_rng(0)
    vals = np.sort(rng.normal(size=rows))
    grad = rng.normal(size=rows)
    hess = rng.uniform(0.01, 0.25, size=rows)
    results = {"numpy": timeit(lambda: numpy_backend.best_split_scan(vals, grad, hess, 1.0), repeats)}
    if numba_backend:
        warmup = timeit(lambda: numba_backend.best_split_scan(vals, grad, hess, 1.0), 1)
        results["numba (first call)"] = warmup
        results["numba"] = timeit(lambda: numba_backend.best_split_scan(vals, grad, hess, 1.0), repeats)
        a = numpy_backend.best_split_scan(vals, grad, hess, 1.0)
        b = numba_backend.best_split_scan(vals, grad, hess, 1.0)
        assert a == b, "backends disagree"
    return results


def bench_tree_predict(rows, repeats):
    rng = np.random.default_rng(1)
    X_train = rng.normal(size=(2000, 12))
    y = (X_train[:, 0] + X_train[:, 5] > 0).astype(float)
    model = train_gbt(X_train, y, GbtModelConfig(n_estimators=50, max_depth=4, learning_rate=0.3))
    arrays = model.ensemble_arrays()
    X = rng.normal(size=(rows, 12))
    results = {"numpy": timeit(lambda: numpy_backend.tree_margin_sum(*arrays, X), repeats)}
    if numba_backend:
        warmup = timeit(lambda: numba_backend.tree_margin_sum(*arrays, X), 1)
        results["numba (first call)"] = warmup
        results["numba"] = timeit(lambda: numba_backend.tree_margin_sum(*arrays, X), repeats)
        a = numpy_backend.tree_margin_sum(*arrays, X)
        b = numba_backend.tree_margin_sum(*arrays, X)
        assert np.array_equal(a, b), "backends disagree"
    return results


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--rows", type=int, default=200_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if numba_backend is None:
        print("numba unavailable; timing the numpy path only")
    benches = [
        (f"best_split_scan ({args.rows:,} rows)", bench_split_scan),
        (f"tree_margin_sum ({args.rows:,} rows x 50 trees)", bench_tree_predict),
    ]
    for title, bench in benches:
        print(f"\n{title}")
        results = bench(args.rows, args.repeats)
        base = results["numpy"]
        for name, seconds in results.items():
            speedup = "" if "first" in name else f"  ({base / seconds:.1f}x vs numpy)"
            print(f"  {name:<20} {seconds * 1e3:9.2f} ms{speedup}")


if __name__ == "__main__":
    main()
