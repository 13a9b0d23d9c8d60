# cython: language_level=3
"""Compiled inner loops. Signatures mirror ``_pykernels`` exactly."""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


def csr_matmul(const i64[::1] indptr, const i64[::1] indices, const f64[::1] data,
               const f64[:, ::1] x, Py_ssize_t n_rows):
    cdef Py_ssize_t k = x.shape[1]
    out_arr = np.zeros((n_rows, k), dtype=np.float64)
    cdef f64[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c, j
    cdef f64 v
    with nogil:
        for i in range(n_rows):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for c in range(k):
                    out[i, c] += v * x[j, c]
    return out_arr


def csr_matmul_t(const i64[::1] indptr, const i64[::1] indices, const f64[::1] data,
                 const f64[:, ::1] g, Py_ssize_t n_cols):
    cdef Py_ssize_t k = g.shape[1]
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    out_arr = np.zeros((n_cols, k), dtype=np.float64)
    cdef f64[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, c, j
    cdef f64 v
    with nogil:
        for i in range(n_rows):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                v = data[p]
                for c in range(k):
                    out[j, c] += v * g[i, c]
    return out_arr


def csr_sddmm(const i64[::1] indptr, const i64[::1] indices,
              const f64[:, ::1] g, const f64[:, ::1] x):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t k = g.shape[1]
    out_arr = np.zeros(indices.shape[0], dtype=np.float64)
    cdef f64[::1] out = out_arr
    cdef Py_ssize_t i, p, c, j
    cdef f64 acc
    with nogil:
        for i in range(n_rows):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                acc = 0.0
                for c in range(k):
                    acc = acc + g[i, c] * x[j, c]
                out[p] = acc
    return out_arr


def circ_corr(const f64[:, ::1] a, const f64[::1] b):
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef f64[:, ::1] out = out_arr
    cdef Py_ssize_t r, i, k, m
    cdef f64 acc
    with nogil:
        for r in range(n):
            for k in range(d):
                acc = 0.0
                m = k
                for i in range(d):
                    acc = acc + a[r, i] * b[m]
                    m = m + 1
                    if m == d:
                        m = 0
                out[r, k] = acc
    return out_arr


def circ_corr_grad_a(const f64[:, ::1] g, const f64[::1] b):
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef f64[:, ::1] out = out_arr
    cdef Py_ssize_t r, i, k, m
    cdef f64 acc
    with nogil:
        for r in range(n):
            for i in range(d):
                acc = 0.0
                m = i
                for k in range(d):
                    acc = acc + g[r, k] * b[m]
                    m = m + 1
                    if m == d:
                        m = 0
                out[r, i] = acc
    return out_arr


def circ_corr_grad_b(const f64[:, ::1] a, const f64[:, ::1] g):
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1]
    out_arr = np.zeros(d, dtype=np.float64)
    cdef f64[::1] out = out_arr
    cdef Py_ssize_t r, i, k, m
    cdef f64 ai
    with nogil:
        for r in range(n):
            for i in range(d):
                ai = a[r, i]
                m = i
                for k in range(d):
                    out[m] += ai * g[r, k]
                    m = m + 1
                    if m == d:
                        m = 0
    return out_arr


def sq_dist_argmin(const f64[:, ::1] points, const f64[:, ::1] centers):
    cdef Py_ssize_t n = points.shape[0], m = centers.shape[0], d = points.shape[1]
    labels_arr = np.zeros(n, dtype=np.int64)
    dist_arr = np.zeros(n, dtype=np.float64)
    cdef i64[::1] labels = labels_arr
    cdef f64[::1] dist = dist_arr
    cdef Py_ssize_t i, j, c
    cdef f64 best, acc, diff
    with nogil:
        for i in range(n):
            best = INFINITY
            for j in range(m):
                acc = 0.0
                for c in range(d):
                    diff = points[i, c] - centers[j, c]
                    acc = acc + diff * diff
                if acc < best:
                    best = acc
                    labels[i] = j
            dist[i] = best
    return labels_arr, dist_arr
