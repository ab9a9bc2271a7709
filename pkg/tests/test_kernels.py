"""Backend parity: the numba kernels must match pure numpy bit for bit."""

import numpy as np
import pytest

from nutripipe.kernels import numpy_backend as knp

numba_backend = pytest.importorskip("nutripipe.kernels.numba_backend")


def _random_split_case(rng):
    n = int(rng.integers(2, 300))
    base = rng.normal(size=max(1, n // 3))
    vals = np.sort(rng.choice(base, size=n))  # deliberately many ties
    grad = rng.normal(size=n)
    hess = rng.uniform(0.001, 0.25, size=n)
    return vals, grad, hess


def test_split_scan_matches_numpy_exactly(rng):
    for _ in range(200):
        vals, grad, hess = _random_split_case(rng)
        assert numba_backend.best_split_scan(vals, grad, hess, 1.0) == knp.best_split_scan(
            vals, grad, hess, 1.0
        )


def test_split_scan_degenerate_cases():
    one = np.array([1.0])
    assert knp.best_split_scan(one, one, one, 1.0) == (-1.0, -1)
    same = np.full(5, 2.0)
    g = np.array([1.0, -1.0, 2.0, -2.0, 1.0])
    assert knp.best_split_scan(same, g, np.abs(g), 1.0) == (-1.0, -1)
    assert numba_backend.best_split_scan(same, g, np.abs(g), 1.0) == (-1.0, -1)


def test_tree_margin_sum_matches_numpy_exactly(rng):
    from nutripipe.model import GbtModelConfig, train_gbt

    X = rng.normal(size=(300, 7))
    y = (X[:, 0] - X[:, 3] > 0).astype(float)
    model = train_gbt(X, y, GbtModelConfig(n_estimators=12, max_depth=4, learning_rate=0.3))
    arrays = model.ensemble_arrays()
    X_eval = rng.normal(size=(1500, 7))
    a = knp.tree_margin_sum(*arrays, X_eval)
    b = numba_backend.tree_margin_sum(*arrays, X_eval)
    assert np.array_equal(a, b)


def test_empty_ensemble_returns_zeros():
    offsets = np.zeros(1, dtype=np.int64)
    empty_i = np.empty(0, dtype=np.int64)
    empty_f = np.empty(0, dtype=np.float64)
    X = np.ones((4, 2))
    out = knp.tree_margin_sum(empty_i, empty_f, empty_i, empty_i, empty_f, offsets, X)
    assert np.array_equal(out, np.zeros(4))


@pytest.mark.parametrize("env,expected", [({"NUTRIPIPE_USE_NUMBA": "0"}, "numpy"),
                                          ({"NUTRIPIPE_THREADS": "1"}, "numba")])
def test_backend_env_flags(env, expected):
    import os
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-c", "from nutripipe import kernels; print(kernels.BACKEND)"],
        env={**os.environ, **env},
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == expected
