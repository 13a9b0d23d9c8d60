"""Stacked multi-channel soft meta-path selection.

Each stack level picks a convex combination of the adjacency set; chaining
the levels with row normalization between them gives a multi-hop graph per
channel. Two evaluation routes exist:

* :func:`stack_hops` materializes the chained matrix (used for inspection).
* :class:`SelectionOperator` applies it to dense features without ever
  forming the product. Row normalizations only ever multiply on the left,
  so the chain collapses to ``diag(1 / (F_0..F_{T-2} 1)) F_0 F_1 .. F_{T-1}``
  where ``F_t`` is the level-``t`` selection; this is what training uses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kcrec import tensor as T
from kcrec.errors import ShapeError, UsageError
from kcrec.sparse import SparseMatrix, degree_normalize


@dataclass
class ImplicitParams:
    logits: T.Tensor  # (hops, channels, |adjacency|)
    weights: list  # per GNN layer: (d_in, d_out), shared by all channels
    agg_weights: list  # per GNN layer: (channels * d_out, d_out)
    agg_bias: list  # per GNN layer: (d_out,)

    @property
    def hops(self) -> int:
        return self.logits.shape[0]

    @property
    def channels(self) -> int:
        return self.logits.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def named(self, prefix="implicit"):
        out = [(f"{prefix}.logits", self.logits)]
        for l in range(self.n_layers):
            out.append((f"{prefix}.layer{l}.weight", self.weights[l]))
            out.append((f"{prefix}.layer{l}.agg_weight", self.agg_weights[l]))
            out.append((f"{prefix}.layer{l}.agg_bias", self.agg_bias[l]))
        return out


def init_implicit(g, n_adj, d0, dims, hops, channels):
    if hops < 1 or channels < 1:
        raise UsageError("hops and channels must be >= 1")
    if not dims:
        raise UsageError("implicit module needs at least one GNN layer")
    logits = T.parameter(g.normal(0.0, 0.1, size=(hops, channels, n_adj)), "implicit.logits")
    weights, agg_w, agg_b = [], [], []
    d_in = d0
    for d_out in dims:
        lim = np.sqrt(6.0 / (d_in + d_out))
        weights.append(T.parameter(g.uniform(-lim, lim, size=(d_in, d_out))))
        lim = np.sqrt(6.0 / (channels * d_out + d_out))
        agg_w.append(T.parameter(g.uniform(-lim, lim, size=(channels * d_out, d_out))))
        agg_b.append(T.parameter(np.zeros(d_out)))
        d_in = d_out
    return ImplicitParams(logits, weights, agg_w, agg_b)


def _softmax(v):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


def soft_select(adjacency, logits) -> SparseMatrix:
    """``sum_i softmax(logits)_i * A_i``."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (len(adjacency),):
        raise ShapeError(f"expected {len(adjacency)} logits, got shape {logits.shape}")
    w = _softmax(logits)
    out = adjacency[0].scale(w[0])
    for wi, a in zip(w[1:], adjacency[1:]):
        out = out + a.scale(wi)
    return out


def _channel_logits(params_or_logits, channel):
    logits = params_or_logits.logits.value if isinstance(params_or_logits, ImplicitParams) \
        else np.asarray(params_or_logits, dtype=np.float64)
    if logits.ndim == 3:
        if not 0 <= channel < logits.shape[1]:
            raise UsageError(f"channel {channel} out of range")
        logits = logits[:, channel, :]
    return logits


def stack_hops(adjacency, params, channel=0) -> SparseMatrix:
    """Chained soft-selected adjacency for one channel.

    ``A0 = select(W0)``; ``At = degree_normalize(A(t-1)) @ select(Wt)``.
    ``adjacency`` may be a Hin or its adjacency list; ``params`` an
    :class:`ImplicitParams` or a (hops, |adjacency|) logit array.
    """
    adjs = adjacency.adjacency if hasattr(adjacency, "adjacency") else list(adjacency)
    logits = _channel_logits(params, channel)
    out = soft_select(adjs, logits[0])
    for t in range(1, logits.shape[0]):
        out = degree_normalize(out) @ soft_select(adjs, logits[t])
    return out


class SelectionOperator:
    """Differentiable application of soft-selected adjacency chains."""

    def __init__(self, adjacency):
        adjs = adjacency.adjacency if hasattr(adjacency, "adjacency") else list(adjacency)
        self.n_adj = len(adjs)
        self.n_nodes = adjs[0].shape[0]
        rows, cols, which, vals = [], [], [], []
        for i, a in enumerate(adjs):
            r, c, v = a.to_coo()
            rows.append(r)
            cols.append(c)
            vals.append(v)
            which.append(np.full(r.size, i, dtype=np.int64))
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        which, vals = np.concatenate(which), np.concatenate(vals)
        n = self.n_nodes
        self.pattern = SparseMatrix.from_coo(rows, cols, 1.0, (n, n))
        # position of each (row, col) inside the union pattern
        key = rows * n + cols
        union_key = self.pattern.row_ids() * n + self.pattern.indices
        pos = np.searchsorted(union_key, key)
        self.mixing = SparseMatrix.from_coo(pos, which, vals, (self.pattern.nnz, self.n_adj))

    def level_values(self, logits_row) -> T.Tensor:
        """Entry values of ``sum_i softmax(logits)_i A_i`` on the union pattern."""
        return T.spmm(self.mixing, T.softmax(logits_row))

    def apply_level(self, values, x) -> T.Tensor:
        return T.pattern_spmm(self.pattern, values, x)

    def channel_values(self, logits: T.Tensor, channel: int) -> list:
        return [self.level_values(T.take_rows(T.take_rows(logits, t), channel))
                for t in range(logits.shape[0])]

    def chain(self, values, x, upto=None) -> T.Tensor:
        """``F_0 F_1 .. F_{upto-1} x`` (unnormalized)."""
        upto = len(values) if upto is None else upto
        y = x
        for t in reversed(range(upto)):
            y = self.apply_level(values[t], y)
        return y

    def row_scale(self, values) -> T.Tensor | None:
        """Reciprocal row sums of ``F_0..F_{T-2}``, zero where a row is empty."""
        if len(values) < 2:
            return None
        p = self.chain(values, np.ones(self.n_nodes), upto=len(values) - 1)
        mask = (p.value > 0).astype(np.float64)
        return T.div(mask, p + (1.0 - mask))

    def apply(self, values, x, scale=None) -> T.Tensor:
        """Chained matrix of one channel applied to ``x``."""
        y = self.chain(values, x)
        if scale is None:
            return y
        if y.ndim == 1:
            return y * scale
        return y * T.reshape(scale, (-1, 1))


def multichannel_forward(hin_or_op, features, params: ImplicitParams) -> T.Tensor:
    """Node representations from the stacked multi-channel GNN, shape (N, d_last).

    Per layer and channel: ``tanh(D^-1 (A + I) H W)`` with ``A`` the channel's
    chained graph and ``D`` the row sums of ``A + I``; channel outputs are
    concatenated and mapped back to ``d`` by a linear layer and ``tanh``.
    """
    op = hin_or_op if isinstance(hin_or_op, SelectionOperator) else SelectionOperator(hin_or_op)
    if params.logits.shape[2] != op.n_adj:
        raise ShapeError(f"logits cover {params.logits.shape[2]} matrices, graph has {op.n_adj}")
    H = T.as_tensor(features)
    graphs = []
    for c in range(params.channels):
        values = op.channel_values(params.logits, c)
        scale = op.row_scale(values)
        deg = op.apply(values, np.ones(op.n_nodes), scale) + 1.0
        graphs.append((values, scale, T.reshape(deg, (-1, 1))))
    for l in range(params.n_layers):
        HW = T.matmul(H, params.weights[l])
        outs = []
        for values, scale, deg in graphs:
            outs.append(T.tanh((op.apply(values, HW, scale) + HW) / deg))
        H = T.tanh(T.matmul(T.concat(outs, axis=1), params.agg_weights[l]) + params.agg_bias[l])
    return H


# -- meta-path readout --------------------------------------------------------

@dataclass
class MetaPathReport:
    relation_names: list
    # per channel: list of (weight, index tuple)
    channels: list = field(default_factory=list)

    def rows(self):
        for c, ranked in enumerate(self.channels):
            for rank, (w, seq) in enumerate(ranked, 1):
                yield c, rank, w, tuple(self.relation_names[i] for i in seq)

    def serialize(self) -> str:
        lines = ["channel\trank\tweight\t" + "\t".join(
            f"type_{i + 1}" for i in range(len(self.channels[0][0][1]) if self.channels and self.channels[0] else 0))]
        for c, rank, w, names in self.rows():
            lines.append("\t".join([str(c), str(rank), repr(float(w)), *names]))
        return "\n".join(lines) + "\n"


def path_weights(logits_channel) -> np.ndarray:
    """Weight of every edge-type sequence: product of per-level softmax weights.

    Returns a flat array in lexicographic sequence order.
    """
    probs = [_softmax(row) for row in np.asarray(logits_channel, dtype=np.float64)]
    w = probs[0]
    for p in probs[1:]:
        w = np.multiply.outer(w, p).ravel()
    return w


def explain_metapaths(params, top_k: int, relation_names=None) -> MetaPathReport:
    """Top-k edge-type sequences per channel by product of selection weights.

    Ties keep lexicographic order of the index sequence.
    """
    if top_k < 1:
        raise UsageError("top_k must be >= 1")
    logits = params.logits.value if isinstance(params, ImplicitParams) else np.asarray(params)
    hops, channels, n_adj = logits.shape
    names = list(relation_names) if relation_names is not None else [str(i) for i in range(n_adj)]
    report = MetaPathReport(names)
    for c in range(channels):
        w = path_weights(logits[:, c, :])
        order = np.argsort(-w, kind="stable")[:top_k]
        seqs = np.array(np.unravel_index(order, (n_adj,) * hops)).T
        report.channels.append([(float(w[k]), tuple(int(i) for i in s)) for k, s in zip(order, seqs)])
    return report
