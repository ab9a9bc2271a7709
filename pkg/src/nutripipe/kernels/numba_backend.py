"""Numba-jitted twins of the numpy kernels.

Same contracts and the same floating-point operation order as
`numpy_backend`; no fastmath so results stay bit-identical across backends.
"""

import numpy as np
from numba import njit, prange

from .numpy_backend import MIN_GAIN


@njit(cache=True)
def best_split_scan(vals, grad, hess, lam):
    n = vals.shape[0]
    if n < 2:
        return -1.0, -1
    g_total = 0.0
    h_total = 0.0
    for i in range(n):
        g_total += grad[i]
        h_total += hess[i]
    parent = (g_total * g_total) / (h_total + lam)

    best_gain = -np.inf
    best_pos = -1
    gl = 0.0
    hl = 0.0
    for i in range(n - 1):
        gl += grad[i]
        hl += hess[i]
        if vals[i + 1] == vals[i]:
            continue
        left = (gl * gl) / (hl + lam)
        gr = g_total - gl
        hr = h_total - hl
        right = (gr * gr) / (hr + lam)
        gain = left + right - parent
        if gain > best_gain:
            best_gain = gain
            best_pos = i
    if best_pos < 0 or not np.isfinite(best_gain) or best_gain <= MIN_GAIN:
        return -1.0, -1
    return best_gain, best_pos


@njit(cache=True, parallel=True)
def tree_margin_sum(feat, thr, left, right, leaf, offsets, X):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n, dtype=np.float64)
    for r in prange(n):
        s = 0.0
        for t in range(n_trees):
            node = offsets[t]
            while feat[node] >= 0:
                if X[r, feat[node]] < thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            s += leaf[node]
        out[r] = s
    return out
