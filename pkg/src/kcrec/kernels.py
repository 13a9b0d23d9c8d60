"""Kernel backend selection.

The compiled extension is used when it imports; set ``KCREC_KERNELS=python``
to force the numpy fallback. In ``auto`` mode circular correlation still
goes through the fallback: against a single relation vector it is a dense
product with a circulant matrix, which BLAS does faster than the direct
summation loop. ``KCREC_KERNELS=compiled`` forces every kernel compiled. Both expose the same functions and all
arguments must be C-contiguous float64 / int64 arrays.
"""
import os

import numpy as np

from kcrec import _pykernels

_want = os.environ.get("KCREC_KERNELS", "auto").lower()
if _want not in ("auto", "python", "compiled"):
    raise ImportError(f"KCREC_KERNELS must be auto, python or compiled, got {_want!r}")

_impl = _pykernels
if _want != "python":
    try:
        from kcrec import _ckernels as _impl
    except ImportError:
        if _want == "compiled":
            raise
        _impl = _pykernels

BACKEND = "python" if _impl is _pykernels else "compiled"

# backend for the circular-correlation family
_circ = _impl if _want == "compiled" else _pykernels

BACKENDS = {"python": _pykernels}
if BACKEND == "compiled":
    BACKENDS["compiled"] = _impl


def _f(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _i(x):
    return np.ascontiguousarray(x, dtype=np.int64)


def csr_matmul(indptr, indices, data, x, n_rows):
    return _impl.csr_matmul(_i(indptr), _i(indices), _f(data), _f(x), int(n_rows))


def csr_matmul_t(indptr, indices, data, g, n_cols):
    return _impl.csr_matmul_t(_i(indptr), _i(indices), _f(data), _f(g), int(n_cols))


def csr_sddmm(indptr, indices, g, x):
    return _impl.csr_sddmm(_i(indptr), _i(indices), _f(g), _f(x))


def circ_corr(a, b):
    return _circ.circ_corr(_f(a), _f(b))


def circ_corr_grad_a(g, b):
    return _circ.circ_corr_grad_a(_f(g), _f(b))


def circ_corr_grad_b(a, g):
    return _circ.circ_corr_grad_b(_f(a), _f(g))


def sq_dist_argmin(points, centers):
    return _impl.sq_dist_argmin(_f(points), _f(centers))
