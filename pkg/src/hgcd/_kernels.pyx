# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: linear assignment and constrained nearest-centroid steps.

Semantics match ``_kernels_py`` exactly; see that module for documentation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def hungarian(cost):
    cdef double[:, ::1] a = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef cnp.int64_t[::1] p = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] way = np.zeros(n + 1, dtype=np.int64)
    cdef unsigned char[::1] used = np.zeros(n + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
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
    cdef cnp.int64_t[::1] out = assign
    for j in range(1, n + 1):
        out[p[j] - 1] = j - 1
    return assign


def assign_nearest(X, C, fixed):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef cnp.int64_t[::1] fx = np.ascontiguousarray(fixed, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], k = c.shape[0], d = x.shape[1]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] lab = labels
    cdef double[::1] dd = dist
    cdef Py_ssize_t i, j, f, best
    cdef double s, t, bestd
    for i in range(n):
        best = -1
        bestd = INFINITY
        for j in range(k):
            if fx[i] >= 0 and j != fx[i]:
                continue
            s = 0.0
            for f in range(d):
                t = x[i, f] - c[j, f]
                s += t * t
            if s < bestd or best < 0:
                bestd = s
                best = j
        lab[i] = best
        dd[i] = bestd
    return labels, dist


def centroid_update(X, labels, Py_ssize_t k):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.int64_t[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cent = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    cdef double[:, ::1] cs = cent
    cdef cnp.int64_t[::1] cn = counts
    cdef Py_ssize_t i, f, j
    for i in range(n):
        j = lab[i]
        cn[j] += 1
        for f in range(d):
            cs[j, f] += x[i, f]
    for j in range(k):
        if cn[j] > 0:
            for f in range(d):
                cs[j, f] /= cn[j]
    return cent, counts
