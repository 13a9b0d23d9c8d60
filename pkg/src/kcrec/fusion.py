"""Dual-head attention fusion of the explicit and implicit views, and scoring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kcrec import tensor as T
from kcrec.errors import ShapeError, UsageError

FUSION_MODES = ("attention", "concat", "add")


@dataclass
class FusionParams:
    W_er: T.Tensor  # (D, D)
    b_er: T.Tensor
    W_ir: T.Tensor  # (D, D)
    b_ir: T.Tensor
    W_v: T.Tensor  # (D, d_F), shared by both views
    b_v: T.Tensor
    W_s: T.Tensor  # (D, 1), shared by both views
    b_s: T.Tensor  # (1,)
    W_cat: T.Tensor | None = None  # (2D, d_F), concat mode only
    b_cat: T.Tensor | None = None

    def named(self, prefix):
        out = [(f"{prefix}.{k}", getattr(self, k))
               for k in ("W_er", "b_er", "W_ir", "b_ir", "W_v", "b_v", "W_s", "b_s")]
        if self.W_cat is not None:
            out += [(f"{prefix}.W_cat", self.W_cat), (f"{prefix}.b_cat", self.b_cat)]
        return out


def init_fusion(g, d_in, d_out, with_concat=False) -> FusionParams:
    def glorot(shape):
        lim = np.sqrt(6.0 / (shape[0] + shape[1]))
        return T.parameter(g.uniform(-lim, lim, size=shape))

    p = FusionParams(
        glorot((d_in, d_in)), T.parameter(np.zeros(d_in)),
        glorot((d_in, d_in)), T.parameter(np.zeros(d_in)),
        glorot((d_in, d_out)), T.parameter(np.zeros(d_out)),
        glorot((d_in, 1)), T.parameter(np.zeros(1)),
    )
    if with_concat:
        p.W_cat = glorot((2 * d_in, d_out))
        p.b_cat = T.parameter(np.zeros(d_out))
    return p


def concat_views(h, z) -> T.Tensor:
    """``[h || z]`` along the feature axis."""
    h, z = T.as_tensor(h), T.as_tensor(z)
    return T.concat([h, z], axis=h.ndim - 1)


def _hidden(h, W, b):
    return T.tanh(T.matmul(h, W) + b)


def view_value(h, W, b, params: FusionParams) -> T.Tensor:
    """``W_v tanh(W_view h + b_view) + b_v`` for one view."""
    return T.matmul(_hidden(h, W, b), params.W_v) + params.b_v


def _as_batch(x):
    x = T.as_tensor(x)
    return (T.reshape(x, (1, -1)), True) if x.ndim == 1 else (x, False)


def dual_head_fuse(h_er, h_ir, params: FusionParams, return_weights=False):
    """Softmax-weighted combination of the two mapped views.

    Accepts single vectors or (B, D) batches. With ``return_weights`` also
    returns the (B, 2) attention weights.
    """
    h_er, single = _as_batch(h_er)
    h_ir, _ = _as_batch(h_ir)
    D = params.W_er.shape[0]
    if h_er.shape[1] != D or h_ir.shape[1] != D:
        raise ShapeError(f"fusion expects width {D}, got {h_er.shape[1]} and {h_ir.shape[1]}")
    t_er = _hidden(h_er, params.W_er, params.b_er)
    t_ir = _hidden(h_ir, params.W_ir, params.b_ir)
    v_er = T.matmul(t_er, params.W_v) + params.b_v
    v_ir = T.matmul(t_ir, params.W_v) + params.b_v
    s_er = T.matmul(t_er, params.W_s) + params.b_s
    s_ir = T.matmul(t_ir, params.W_s) + params.b_s
    w = T.softmax(T.concat([s_er, s_ir], axis=1), axis=1)
    w_er = T.reshape(T.matmul(w, np.array([1.0, 0.0])), (-1, 1))
    w_ir = T.reshape(T.matmul(w, np.array([0.0, 1.0])), (-1, 1))
    out = w_er * v_er + w_ir * v_ir
    if single:
        out = T.reshape(out, (-1,))
    return (out, w.value) if return_weights else out


def fuse(h_er, h_ir, params: FusionParams, mode="attention") -> T.Tensor:
    """Fused representation under a fusion mode; a missing view selects single-view mapping."""
    if mode not in FUSION_MODES:
        raise UsageError(f"unknown fusion mode {mode!r}")
    if h_er is None and h_ir is None:
        raise UsageError("fusion needs at least one view")
    if h_ir is None:
        return view_value(h_er, params.W_er, params.b_er, params)
    if h_er is None:
        return view_value(h_ir, params.W_ir, params.b_ir, params)
    if mode == "attention":
        return dual_head_fuse(h_er, h_ir, params)
    if mode == "add":
        return (view_value(h_er, params.W_er, params.b_er, params)
                + view_value(h_ir, params.W_ir, params.b_ir, params))
    joined = T.concat([T.as_tensor(h_er), T.as_tensor(h_ir)], axis=T.as_tensor(h_er).ndim - 1)
    return T.matmul(joined, params.W_cat) + params.b_cat


def fusion_used(params: FusionParams, mode, views, output_bias=True) -> list:
    """Parameters of ``params`` that can change the fused output under a mode and views.

    ``b_s`` is never listed: it shifts both attention logits equally and
    cancels in the softmax. Pass ``output_bias=False`` when a constant shift
    of the output is invisible downstream (item side of a dot-product
    ranking), which drops ``b_v`` / ``b_cat`` as well.
    """
    if views == ("er",):
        out = [params.W_er, params.b_er, params.W_v, params.b_v]
    elif views == ("ir",):
        out = [params.W_ir, params.b_ir, params.W_v, params.b_v]
    elif mode == "concat":
        out = [params.W_cat, params.b_cat]
    elif mode == "add":
        out = [params.W_er, params.b_er, params.W_ir, params.b_ir, params.W_v, params.b_v]
    else:
        out = [params.W_er, params.b_er, params.W_ir, params.b_ir, params.W_v, params.b_v, params.W_s]
    if not output_bias:
        out = [p for p in out if p is not params.b_v and p is not params.b_cat]
    return out


def predict_score(h_user, h_concept) -> T.Tensor:
    """Dot-product interaction score (row-wise for batches)."""
    h_user, h_concept = T.as_tensor(h_user), T.as_tensor(h_concept)
    if h_user.shape != h_concept.shape:
        raise ShapeError(f"score operands differ in shape: {h_user.shape} vs {h_concept.shape}")
    return T.sum_(h_user * h_concept, axis=h_user.ndim - 1)
