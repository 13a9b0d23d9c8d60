"""Relation-updated GCN over one-hop typed edges.

Every non-identity relation ``r`` carries an embedding ``z_r`` built from a
small set of shared basis vectors. A layer composes each neighbour's state
with the relation embedding by circular correlation, projects it with the
relation's own weight, averages over all incoming edges and adds a
self-connection before the ``tanh``. Relation embeddings are carried to the
next layer through a per-layer linear transform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kcrec import tensor as T
from kcrec.errors import ShapeError, UsageError
from kcrec.hin import Hin
from kcrec.sparse import SparseMatrix


@dataclass
class RelationBasis:
    bases: T.Tensor  # (B, d0)
    coeffs: T.Tensor  # (relations, B)

    @property
    def n_bases(self) -> int:
        return self.bases.shape[0]

    @property
    def n_relations(self) -> int:
        return self.coeffs.shape[0]

    def param_count(self) -> int:
        return self.bases.size + self.coeffs.size

    def named(self, prefix="explicit"):
        return [(f"{prefix}.bases", self.bases), (f"{prefix}.coeffs", self.coeffs)]


@dataclass
class ExplicitLayer:
    rel_weights: T.Tensor  # (relations, d_in, d_out)
    self_weight: T.Tensor  # (d_in, d_out)
    rel_transform: T.Tensor | None  # (d_in, d_out); None on the last layer
    bias: T.Tensor  # (d_out,)

    def named(self, prefix):
        out = [
            (f"{prefix}.rel_weights", self.rel_weights),
            (f"{prefix}.self_weight", self.self_weight),
        ]
        if self.rel_transform is not None:
            out.append((f"{prefix}.rel_transform", self.rel_transform))
        out.append((f"{prefix}.bias", self.bias))
        return out


@dataclass
class ExplicitParams:
    layers: list

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def named(self, prefix="explicit"):
        out = []
        for l, layer in enumerate(self.layers):
            out.extend(layer.named(f"{prefix}.layer{l}"))
        return out


class ExplicitStructure:
    """Per-relation in-degree-normalized blocks: (N rows) x (source-type columns)."""

    def __init__(self, hin: Hin):
        self.n_nodes = hin.n_nodes
        deg = hin.degrees()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        self.blocks = []
        for rel in hin.relations[:-1]:
            c0, c1 = hin.type_range(rel.src)
            r, c, v = rel.matrix.to_coo()
            block = SparseMatrix.from_coo(r, c - c0, v * inv[r], (self.n_nodes, c1 - c0))
            self.blocks.append((c0, c1, block))

    @property
    def n_relations(self) -> int:
        return len(self.blocks)


def _glorot(g, shape):
    fan_in, fan_out = shape[-2], shape[-1]
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return g.uniform(-lim, lim, size=shape)


def init_explicit(g, n_relations, d0, dims, n_bases):
    """Random basis and layer parameters; ``dims`` lists each layer's output width.

    The last layer has no relation transform: nothing consumes its updated
    relation embeddings.
    """
    if n_bases < 1:
        raise UsageError("basis count must be >= 1")
    if not dims:
        raise UsageError("explicit module needs at least one layer")
    basis = RelationBasis(
        T.parameter(_glorot(g, (n_bases, d0)), "explicit.bases"),
        T.parameter(_glorot(g, (n_relations, n_bases)), "explicit.coeffs"),
    )
    layers = []
    d_in = d0
    for l, d_out in enumerate(dims):
        last = l == len(dims) - 1
        layers.append(ExplicitLayer(
            T.parameter(_glorot(g, (n_relations, d_in, d_out))),
            T.parameter(_glorot(g, (d_in, d_out))),
            None if last else T.parameter(_glorot(g, (d_in, d_out))),
            T.parameter(np.zeros(d_out)),
        ))
        d_in = d_out
    return basis, ExplicitParams(layers)


def relation_embed(basis: RelationBasis, r: int) -> T.Tensor:
    """``z_r = sum_b coeffs[r, b] * bases[b]``."""
    if not 0 <= r < basis.n_relations:
        raise UsageError(f"relation index {r} out of range [0, {basis.n_relations})")
    return T.matmul(T.take_rows(basis.coeffs, r), basis.bases)


def relation_embeddings(basis: RelationBasis) -> T.Tensor:
    return T.matmul(basis.coeffs, basis.bases)


def compose(x, z) -> T.Tensor:
    """Entity-relation composition: circular correlation of node and relation."""
    x, z = T.as_tensor(x), T.as_tensor(z)
    if x.shape[-1] != z.shape[-1]:
        raise ShapeError(f"compose: node dim {x.shape[-1]} != relation dim {z.shape[-1]}")
    return T.circ_corr(x, z)


def explicit_layer(H, Z, structure: ExplicitStructure, layer: ExplicitLayer):
    """One relation-updated GCN layer; returns ``(H', Z')`` (``Z'`` None without a transform)."""
    H, Z = T.as_tensor(H), T.as_tensor(Z)
    if H.shape[0] != structure.n_nodes:
        raise ShapeError(f"expected {structure.n_nodes} node rows, got {H.shape[0]}")
    if Z.shape[0] != structure.n_relations:
        raise ShapeError(f"expected {structure.n_relations} relation rows, got {Z.shape[0]}")
    pre = T.matmul(H, layer.self_weight) + layer.bias
    for r, (c0, c1, block) in enumerate(structure.blocks):
        if block.nnz == 0:
            continue
        src = T.slice_rows(H, c0, c1)
        msg = T.matmul(compose(src, T.take_rows(Z, r)), T.take_rows(layer.rel_weights, r))
        pre = pre + T.spmm(block, msg)
    Zn = None if layer.rel_transform is None else T.matmul(Z, layer.rel_transform)
    return T.tanh(pre), Zn


def explicit_forward(hin, features, basis: RelationBasis, params: ExplicitParams) -> T.Tensor:
    """Node representations after all layers, shape (N, d_last)."""
    structure = hin if isinstance(hin, ExplicitStructure) else ExplicitStructure(hin)
    H = T.as_tensor(features)
    Z = relation_embeddings(basis)
    for layer in params.layers:
        H, Z = explicit_layer(H, Z, structure, layer)
    return H
