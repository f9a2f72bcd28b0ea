"""Pure numpy neighbor-mean kernels (fallback for the compiled extension).

Summation runs over each neighbor list in stored order, matching the
compiled loops term for term.
"""

import numpy as np


def _segment_sum(h, indptr, indices):
    # add the k-th neighbor of every node with degree > k, for k = 0, 1, ...
    # so each row is summed left to right like the compiled loop (reduceat
    # sums pairwise and rounds differently)
    n = indptr.shape[0] - 1
    out = np.zeros((n, h.shape[1]), dtype=h.dtype)
    deg = np.diff(indptr)
    rows = np.arange(n)
    for k in range(int(deg.max()) if n else 0):
        live = rows[deg > k]
        out[live] += h[indices[indptr[live] + k]]
    return out, deg


def neighbor_mean(h, indptr, indices):
    out, deg = _segment_sum(h, indptr, indices)
    nz = deg > 0
    out[nz] /= deg[nz, None].astype(h.dtype)
    return out


def neighbor_mean_transpose(g, indptr, indices):
    deg = np.diff(indptr)
    scaled = np.zeros_like(g)
    nz = deg > 0
    scaled[nz] = g[nz] / deg[nz, None].astype(g.dtype)
    out, _ = _segment_sum(scaled, indptr, indices)
    return out
