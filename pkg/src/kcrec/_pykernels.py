"""Numpy/scipy implementations of the compiled kernels.

Used when the extension is not built, or when ``KCREC_KERNELS=python``.
"""
import numpy as np
import scipy.sparse as sp


def _csr(indptr, indices, data, shape):
    return sp.csr_matrix((data, indices, indptr), shape=shape)


def csr_matmul(indptr, indices, data, x, n_rows):
    return np.asarray(_csr(indptr, indices, data, (n_rows, x.shape[0])) @ x)


def csr_matmul_t(indptr, indices, data, g, n_cols):
    return np.asarray(_csr(indptr, indices, data, (g.shape[0], n_cols)).T @ g)


def csr_sddmm(indptr, indices, g, x):
    rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    return np.einsum("ij,ij->i", g[rows], x[indices])


def _circulant_index(d):
    return (np.arange(d)[:, None] + np.arange(d)[None, :]) % d


def circ_corr(a, b):
    return a @ b[_circulant_index(len(b))]


def circ_corr_grad_a(g, b):
    return g @ b[_circulant_index(len(b))].T


def circ_corr_grad_b(a, g):
    d = a.shape[1]
    return np.bincount(_circulant_index(d).ravel(), weights=(a.T @ g).ravel(), minlength=d)


def sq_dist_argmin(points, centers, chunk=4096):
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        block = points[start:start + chunk]
        d2 = ((block[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        lab = d2.argmin(axis=1)
        labels[start:start + chunk] = lab
        dist[start:start + chunk] = d2[np.arange(len(block)), lab]
    return labels, dist
