"""Pure-numpy reference implementations of the hot kernels.

The numba twins in `numba_backend` must match these bit for bit: same
operation order, same accumulation order, no fast-math. Keep the two files
in sync.
"""

import numpy as np

# Gains below this are treated as no improvement; keeps degenerate splits out.
MIN_GAIN = 1e-12


def best_split_scan(vals, grad, hess, lam):
    """Scan one feature for the best greedy split.

    `vals` is sorted ascending with `grad`/`hess` aligned to it. Returns
    (gain, pos) where the split separates positions [0..pos] from [pos+1..],
    or (-1.0, -1) when no value boundary improves on the parent. Ties keep
    the leftmost position.
    """
    n = vals.shape[0]
    if n < 2:
        return -1.0, -1
    cg = np.cumsum(grad)
    ch = np.cumsum(hess)
    g_total = cg[-1]
    h_total = ch[-1]
    parent = (g_total * g_total) / (h_total + lam)

    gl = cg[:-1]
    hl = ch[:-1]
    left = (gl * gl) / (hl + lam)
    gr = g_total - gl
    hr = h_total - hl
    right = (gr * gr) / (hr + lam)
    gains = left + right - parent
    gains[vals[1:] == vals[:-1]] = -np.inf

    pos = int(np.argmax(gains))
    gain = float(gains[pos])
    if not np.isfinite(gain) or gain <= MIN_GAIN:
        return -1.0, -1
    return gain, pos


def tree_margin_sum(feat, thr, left, right, leaf, offsets, X):
    """Sum of leaf values over an ensemble for every row of X.

    Trees are concatenated node arrays; `offsets[t]` is tree t's root and
    `offsets[-1]` the total node count. Internal nodes route `x < thr` to
    `left`, else `right`; leaves carry feat == -1. Rows advance through each
    tree level-synchronously; trees accumulate in index order so rounding
    matches the sequential numba walk.
    """
    n = X.shape[0]
    out = np.zeros(n, dtype=np.float64)
    for t in range(offsets.shape[0] - 1):
        node = np.full(n, offsets[t], dtype=np.int64)
        while True:
            f = feat[node]
            active = np.flatnonzero(f >= 0)
            if active.size == 0:
                break
            an = node[active]
            xv = X[active, f[active]]
            node[active] = np.where(xv < thr[an], left[an], right[an])
        out += leaf[node]
    return out
