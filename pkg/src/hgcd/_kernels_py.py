"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Both modules expose the same three functions with identical semantics; the
package picks one at import time (see ``hgcd.kernels``).
"""

import numpy as np


def hungarian(cost):
    """Row -> column assignment minimising total cost of a square matrix.

    Shortest-augmenting-path method with dual potentials, O(n^3).
    """
    a = np.asarray(cost, dtype=np.float64)
    n = a.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = np.empty(n, dtype=np.int64)
    assign[p[1:] - 1] = np.arange(n)
    return assign


def assign_nearest(X, C, fixed):
    """Nearest-centroid labels (lowest index on ties); rows with ``fixed >= 0`` keep that label.

    Returns ``(labels, sq_dist_to_own_centroid)``.
    """
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    fixed = np.asarray(fixed, dtype=np.int64)
    d2 = np.empty((len(X), len(C)))
    for k in range(len(C)):
        diff = X - C[k]
        d2[:, k] = np.einsum("ij,ij->i", diff, diff)
    labels = np.where(fixed >= 0, fixed, np.argmin(d2, axis=1))
    return labels, d2[np.arange(len(X)), labels]


def centroid_update(X, labels, k):
    """Per-cluster sums accumulated in sample order, then means; returns ``(centroids, counts)``.

    Empty clusters get a zero row and count 0.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k)
    cent = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    return cent, counts
