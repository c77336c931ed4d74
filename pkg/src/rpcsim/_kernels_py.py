"""NumPy implementations of the compiled kernels, used when the extension is absent."""

import numpy as np


def first_ultrametric_violation(d, tol):
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            bound = np.maximum(d[i, :], d[:, j])
            bad = np.nonzero(d[i, j] > bound + tol)[0]
            if bad.size:
                return (i, j, int(bad[0]))
    return None


def max_ultrametric_excess(d):
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    worst = 0.0
    for k in range(n):
        bound = np.maximum(d[:, k][:, None], d[k, :][None, :])
        worst = max(worst, float(np.max(d - bound)))
    return worst


def record_merges(old_block, new_block, tau, u):
    old_block = np.asarray(old_block)
    new_block = np.asarray(new_block)
    mask = (new_block[:, None] == new_block[None, :]) & (old_block[:, None] != old_block[None, :])
    tau[mask] = u
    return int(np.count_nonzero(np.triu(mask, 1)))


def shared_depth(paths):
    paths = np.asarray(paths)
    n, m = paths.shape
    if m == 0:
        return np.zeros((n, n), dtype=np.int64)
    eq = paths[:, None, :] == paths[None, :, :]
    # leading run of matches along the last axis
    return np.cumprod(eq, axis=2).sum(axis=2).astype(np.int64)
