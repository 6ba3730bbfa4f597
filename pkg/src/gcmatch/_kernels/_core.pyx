# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled flat-loop kernels; semantics mirror ``fallback.py`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, atan2, fabs

cnp.import_array()


def pairwise_sqdist(a, b):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], d = av.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j, t
    cdef double acc, diff
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(d):
                diff = av[i, t] - bv[j, t]
                acc += diff * diff
            out[i, j] = acc
    return out


def assign_labels(points, centers):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pv = np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cv = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0], x = cv.shape[0], d = pv.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t i, j, t
    cdef double best, acc, diff
    cdef Py_ssize_t arg
    for i in range(n):
        best = INFINITY
        arg = 0
        for j in range(x):
            acc = 0.0
            for t in range(d):
                diff = pv[i, t] - cv[j, t]
                acc += diff * diff
            if acc < best:
                best = acc
                arg = j
        labels[i] = arg
    return labels


def knn_indices(points, k):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pv = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0], d = pv.shape[1], kk = k
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((n, kk), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j, t, s
    cdef double acc, diff, best
    cdef Py_ssize_t arg
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for t in range(d):
                diff = pv[i, t] - pv[j, t]
                acc += diff * diff
            dist[j] = acc
        dist[i] = INFINITY
        for s in range(kk):
            best = INFINITY
            arg = 0
            for j in range(n):
                if dist[j] < best:
                    best = dist[j]
                    arg = j
            out[i, s] = arg
            dist[arg] = INFINITY
    return out


def mutual_top1_pairs(scores):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sv = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t n = sv.shape[0], m = sv.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] best_col = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] best_row = np.empty(m, dtype=np.int64)
    cdef Py_ssize_t i, j
    cdef double best
    cdef Py_ssize_t arg
    for i in range(n):
        best = -INFINITY
        arg = 0
        for j in range(m):
            if sv[i, j] > best:
                best = sv[i, j]
                arg = j
        best_col[i] = arg
    for j in range(m):
        best = -INFINITY
        arg = 0
        for i in range(n):
            if sv[i, j] > best:
                best = sv[i, j]
                arg = i
        best_row[j] = arg
    pairs = []
    for i in range(n):
        if best_row[best_col[i]] == i:
            pairs.append((i, best_col[i]))
    out = np.asarray(pairs, dtype=np.int64)
    if out.size == 0:
        out = np.empty((0, 2), dtype=np.int64)
    return out


def triplet_angles(centers, neighbors):
    # atan2(|cross|, dot) keeps the angle well-conditioned near 0 and pi
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cv = np.ascontiguousarray(centers, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] nb = np.ascontiguousarray(neighbors, dtype=np.int64)
    cdef Py_ssize_t x = nb.shape[0], k = nb.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((x, k, k), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] diffs = np.empty((k, 2), dtype=np.float64)
    cdef Py_ssize_t c, i, j
    cdef double dot, cross
    for c in range(x):
        for i in range(k):
            diffs[i, 0] = cv[nb[c, i], 0] - cv[c, 0]
            diffs[i, 1] = cv[nb[c, i], 1] - cv[c, 1]
        for i in range(k):
            for j in range(k):
                dot = diffs[i, 0] * diffs[j, 0] + diffs[i, 1] * diffs[j, 1]
                cross = diffs[i, 0] * diffs[j, 1] - diffs[i, 1] * diffs[j, 0]
                out[c, i, j] = atan2(fabs(cross), dot)
    return out
