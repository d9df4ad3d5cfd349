# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: inner-product scoring and k-means assignment.

All kernels read f32 rows and accumulate in f64, matching the numpy
fallbacks in unir.kernels.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def feature_scores(const float[:, ::1] mat, const float[::1] q):
    """out[i] = <mat[i], q> accumulated in f64."""
    cdef Py_ssize_t n = mat.shape[0]
    cdef Py_ssize_t d = mat.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += <double> mat[i, j] * <double> q[j]
        out[i] = acc
    return out_arr


def pair_scores(const float[:, ::1] img, const float[:, ::1] txt,
                const float[::1] q, double wi, double wt):
    """out[i] = wi * <img[i], q> + wt * <txt[i], q> in one pass."""
    cdef Py_ssize_t n = img.shape[0]
    cdef Py_ssize_t d = img.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc_i, acc_t
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        acc_i = 0.0
        acc_t = 0.0
        for j in range(d):
            acc_i += <double> img[i, j] * <double> q[j]
            acc_t += <double> txt[i, j] * <double> q[j]
        out[i] = wi * acc_i + wt * acc_t
    return out_arr


def assign_nearest(const float[:, ::1] x, const float[:, ::1] centroids):
    """Squared-Euclidean nearest-centroid assignment; ties go to the lower index."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t k = centroids.shape[0]
    cdef Py_ssize_t i, j, c
    cdef double dist, diff, best
    cdef Py_ssize_t best_c
    assign_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] assign = assign_arr
    cdef double[::1] dists = dist_arr
    for i in range(n):
        best = -1.0
        best_c = 0
        for c in range(k):
            dist = 0.0
            for j in range(d):
                diff = <double> x[i, j] - <double> centroids[c, j]
                dist += diff * diff
            if best < 0.0 or dist < best:
                best = dist
                best_c = c
        assign[i] = best_c
        dists[i] = best
    return assign_arr, dist_arr
