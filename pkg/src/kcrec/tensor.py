"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations are recorded on the innermost active :class:`Tape` whenever one of
their operands requires a gradient. Parameters are the only persistent
differentiable values; the tape is rebuilt on every forward pass::

    w = parameter(np.ones(3), "w")
    with Tape() as tape:
        loss = (w * w).sum()
    (grad,) = tape.backward(loss, [w])
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kcrec import kernels
from kcrec.errors import DegenerateInputError, ShapeError, UsageError
from kcrec.sparse import SparseMatrix

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def parameter(value, name=None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._ids: set[int] = set()

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def _record(self, out, inputs, backward):
        self.nodes.append(_Node(out, inputs, backward))
        self._ids.add(id(out))

    def backward(self, loss: Tensor, params) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. each of ``params``.

        Parameters the loss does not depend on get a zero array.
        """
        if not isinstance(loss, Tensor) or id(loss) not in self._ids:
            raise UsageError("loss was not recorded on this tape")
        if loss.size != 1:
            raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(p), np.zeros_like(p.value)) for p in params]


def _make(value, inputs, backward) -> Tensor:
    if _TAPES and any(t.requires_grad for t in inputs):
        out = Tensor(value, requires_grad=True)
        _TAPES[-1]._record(out, inputs, backward)
        return out
    return Tensor(value)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * av * g,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(np.atleast_1d(a.value)).reshape(a.shape)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(a) -> Tensor:
    """Numerically stable ``log(sigmoid(a))``."""
    a = as_tensor(a)
    x = a.value
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(np.atleast_1d(x)).reshape(x.shape)
    return _make(y, (a,), lambda g: (g * (1.0 - s),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    return _make(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def leaky_relu(a, slope=0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.value > 0, 1.0, slope)
    return _make(a.value * factor, (a,), lambda g: (g * factor,))


# -- reductions and shape ---------------------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), backward)


def sum_squares(tensors) -> Tensor:
    """Scalar ``sum_i ||t_i||^2`` over several tensors, recorded as one operation."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise UsageError("sum_squares needs at least one tensor")
    vals = [t.value for t in ts]
    total = sum(float(np.vdot(v, v)) for v in vals)
    return _make(np.array(total), tuple(ts), lambda g: tuple(2.0 * g * v for v in vals))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.T, (a,), lambda g: (g.T,))


def concat(tensors, axis=0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.value for t in tensors], axis=axis), tensors, backward)


def take_rows(a, index) -> Tensor:
    """Gather rows (or elements of a vector); gradients scatter-add back."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.value[index], (a,), backward)


def slice_rows(a, start, stop) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _make(a.value[start:stop], (a,), backward)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Dense product; ``a`` may also be a constant :class:`SparseMatrix`."""
    if isinstance(a, SparseMatrix):
        return spmm(a, b)
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or av.ndim > 2 or bv.ndim > 2:
        raise ShapeError(f"matmul expects 1-D or 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {av.shape} @ {bv.shape}")
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv
    out = a2 @ b2
    if av.ndim == 1:
        out = out[0]
    if bv.ndim == 1:
        out = out[..., 0]

    def backward(g):
        g2 = np.asarray(g)
        if av.ndim == 1 and bv.ndim == 1:
            g2 = g2.reshape(1, 1)
        elif av.ndim == 1:
            g2 = g2[None, :]
        elif bv.ndim == 1:
            g2 = g2[:, None]
        ga = (g2 @ b2.T).reshape(av.shape)
        gb = (a2.T @ g2).reshape(bv.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def spmm(s: SparseMatrix, x) -> Tensor:
    """Constant sparse matrix times a differentiable dense matrix."""
    x = as_tensor(x)
    if s.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm dimension mismatch: {s.shape} @ {x.shape}")
    return _make(s.matmul_dense(x.value), (x,), lambda g: (s.rmatmul_dense(g),))


def pattern_spmm(pattern: SparseMatrix, values, x) -> Tensor:
    """Sparse matrix with fixed structure and differentiable entries, times ``x``.

    ``values`` holds one entry per stored position of ``pattern`` (its own
    data is ignored). Returns ``M @ x`` with ``M[row(e), col(e)] = values[e]``.
    """
    values, x = as_tensor(values), as_tensor(x)
    if values.shape != (pattern.nnz,):
        raise ShapeError(f"expected {pattern.nnz} values, got {values.shape}")
    vec = x.ndim == 1
    xv = x.value[:, None] if vec else x.value
    vv = values.value
    n_rows, n_cols = pattern.shape
    out = kernels.csr_matmul(pattern.indptr, pattern.indices, vv, xv, n_rows)

    def backward(g):
        g2 = g[:, None] if vec else g
        gv = kernels.csr_sddmm(pattern.indptr, pattern.indices, g2, xv)
        gx = kernels.csr_matmul_t(pattern.indptr, pattern.indices, vv, g2, n_cols)
        return gv, (gx[:, 0] if vec else gx)

    return _make(out[:, 0] if vec else out, (values, x), backward)


def circ_corr(a, b) -> Tensor:
    """Circular correlation ``out[k] = sum_i a[i] * b[(i + k) mod d]``.

    ``a`` may be a vector or a matrix (applied row by row against ``b``).
    """
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"circ_corr length mismatch: {a.shape} vs {b.shape}")
    vec = a.ndim == 1
    a2 = a.value[None, :] if vec else a.value
    bv = b.value
    out = kernels.circ_corr(a2, bv)

    def backward(g):
        g2 = g[None, :] if vec else g
        ga = kernels.circ_corr_grad_a(g2, bv)
        gb = kernels.circ_corr_grad_b(a2, g2)
        return (ga[0] if vec else ga), gb

    return _make(out[0] if vec else out, (a, b), backward)


# -- normalizations ---------------------------------------------------------

def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise ShapeError("softmax of an empty vector")
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def logsumexp(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = a.value.max(axis=axis, keepdims=True)
    e = np.exp(a.value - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    p = e / s
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * p,))


def normalize_rows(a) -> Tensor:
    """Scale every row (or the vector) to unit Euclidean norm."""
    a = as_tensor(a)
    av = a.value
    norms = np.linalg.norm(av, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("cannot normalize a zero-norm vector")
    u = av / norms
    return _make(u, (a,),
                 lambda g: ((g - u * (g * u).sum(axis=-1, keepdims=True)) / norms,))


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity of two nonzero vectors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine_sim expects equal-length vectors, got {a.shape}, {b.shape}")
    return sum_(normalize_rows(a) * normalize_rows(b))


def cosine_matrix(a, b) -> Tensor:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state was built for a different parameter list")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or m.shape != p.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value = p.value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# -- verification helpers ---------------------------------------------------

def numerical_gradient(fn, params, eps=1e-5, coords=None) -> list[np.ndarray]:
    """Central finite differences of scalar ``fn()`` w.r.t. each parameter.

    ``coords`` optionally lists, per parameter, the flat indices to perturb;
    other entries are left at zero.
    """
    out = []
    for i, p in enumerate(params):
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for k in (range(flat.size) if coords is None else coords[i]):
            orig = flat[k]
            flat[k] = orig + eps
            up = float(fn().value)
            flat[k] = orig - eps
            down = float(fn().value)
            flat[k] = orig
            gflat[k] = (up - down) / (2 * eps)
        out.append(g)
    return out


def gradient_errors(fn, params, eps=1e-5, max_coords=None, seed=0) -> list[float]:
    """Relative error ``|ad - fd| / max(|ad|, |fd|)`` per parameter.

    ``fn`` builds the loss from the current parameter values; it is called
    once under a tape and repeatedly without one. With ``max_coords``, a
    parameter with more entries is compared on that many random entries.
    """
    with Tape() as tape:
        loss = fn()
    analytic = tape.backward(loss, params)
    coords = None
    if max_coords is not None:
        g = np.random.default_rng(seed)
        coords = [np.arange(p.value.size) if p.value.size <= max_coords
                  else np.sort(g.choice(p.value.size, max_coords, replace=False)) for p in params]
    numeric = numerical_gradient(fn, params, eps, coords)
    errs = []
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        if coords is not None:
            a, n = a.reshape(-1)[coords[i]], n.reshape(-1)[coords[i]]
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        errs.append(0.0 if scale < 1e-12 else float(np.linalg.norm(a - n) / scale))
    return errs
