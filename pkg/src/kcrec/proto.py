"""Prototypes, prototypical graphs, GAT enhancement and the InfoNCE losses."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kcrec import kernels
from kcrec import rng as rngs
from kcrec import tensor as T
from kcrec.errors import ShapeError, UsageError

LEAKY_SLOPE = 0.2


@dataclass
class PrototypeSet:
    prototypes: np.ndarray  # (n, d)
    assignment: np.ndarray  # (N,)
    inertia: float
    history: list = field(default_factory=list)  # inertia after every Lloyd step
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.prototypes.shape[0]


def _farthest_point_init(points, n, g):
    centers = [int(g.integers(points.shape[0]))]
    _, dist = kernels.sq_dist_argmin(points, points[centers])
    for _ in range(1, n):
        nxt = int(np.argmax(dist))
        centers.append(nxt)
        dist = np.minimum(dist, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[centers].copy()


def kmeans_prototypes(points, n: int, seed=0, max_iter=100, key=()) -> PrototypeSet:
    """Lloyd's k-means from a farthest-point initialization.

    Stops after ``max_iter`` iterations or once assignments are stable. An
    emptied cluster is re-seeded at the point farthest from its center.
    Prototypes are plain arrays, so no gradient can flow into them.
    ``key`` selects a sub-stream of the clustering stream (e.g. the epoch).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError("k-means expects an (N, d) array")
    N = points.shape[0]
    if not 1 <= n <= N:
        raise UsageError(f"cannot form {n} prototypes from {N} points")
    g = rngs.stream(seed, "clustering", *key)
    centers = _farthest_point_init(points, n, g)
    labels, dist = kernels.sq_dist_argmin(points, centers)
    history = [float(dist.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=n)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(dist))
            centers[j] = points[far]
            dist[far] = 0.0
        new_labels, dist = kernels.sq_dist_argmin(points, centers)
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels) and nonempty.all():
            break
        labels = new_labels
    # final centers are the means of the final assignment
    counts = np.bincount(labels, minlength=n)
    sums = np.zeros_like(centers)
    np.add.at(sums, labels, points)
    nonempty = counts > 0
    centers[nonempty] = sums[nonempty] / counts[nonempty, None]
    inertia = float(((points - centers[labels]) ** 2).sum())
    return PrototypeSet(centers, labels, inertia, history, it)


@dataclass
class PrototypicalGraph:
    features: object  # (n + 1, d); row 0 is the target
    adjacency: np.ndarray  # (n + 1, n + 1), ones off the diagonal

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


def build_prototypical_graph(target, protos) -> PrototypicalGraph:
    """Target node fully connected to every prototype (and prototypes to each other)."""
    P = protos.prototypes if isinstance(protos, PrototypeSet) else np.asarray(protos)
    target = T.as_tensor(target)
    if target.shape != (P.shape[1],):
        raise ShapeError(f"target dim {target.shape} does not match prototypes {P.shape}")
    feats = T.concat([T.reshape(target, (1, -1)), T.Tensor(P)], axis=0)
    m = P.shape[0] + 1
    return PrototypicalGraph(feats, np.ones((m, m)) - np.eye(m))


@dataclass
class GatParams:
    weight: T.Tensor  # (d, d)
    attn: T.Tensor  # (2d,)
    slope: float = LEAKY_SLOPE

    def named(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.attn", self.attn)]


def init_gat(g, d) -> GatParams:
    lim = np.sqrt(6.0 / (2 * d))
    return GatParams(T.parameter(g.uniform(-lim, lim, size=(d, d))),
                     T.parameter(g.uniform(-lim, lim, size=2 * d) / np.sqrt(2)))


def _attn_halves(params):
    d = params.weight.shape[1]
    left = T.take_rows(params.attn, np.arange(d))
    right = T.take_rows(params.attn, np.arange(d, 2 * d))
    return left, right


def gat_layer(features, adjacency, params: GatParams):
    """Single-head GAT layer over a small dense graph.

    Returns the updated node features and the (m, m) attention matrix.
    """
    X = T.as_tensor(features)
    adjacency = np.asarray(adjacency)
    WX = T.matmul(X, params.weight)
    left, right = _attn_halves(params)
    src = T.reshape(T.matmul(WX, left), (-1, 1))
    dst = T.reshape(T.matmul(WX, right), (1, -1))
    logits = T.leaky_relu(src + dst, params.slope)
    # non-edges get a large negative offset before the softmax
    mask = np.where(adjacency != 0, 0.0, -1e30)
    att = T.softmax(logits + mask, axis=1)
    return T.matmul(att, WX), att.value


def gat_encode(graph: PrototypicalGraph, params: GatParams) -> T.Tensor:
    """Enhanced representation: the target's row after one GAT layer."""
    out, _ = gat_layer(graph.features, graph.adjacency, params)
    return T.take_rows(out, 0)


def gat_encode_batch(targets, prototypes, params: GatParams):
    """Row-0 GAT output for many targets sharing one prototype set.

    Equivalent to :func:`gat_encode` on each target's prototypical graph,
    evaluated only for the target row. Returns (B, d) outputs and (B, n)
    attention weights.
    """
    H = T.as_tensor(targets)
    P = T.Tensor(prototypes.prototypes if isinstance(prototypes, PrototypeSet)
                 else T.as_tensor(prototypes).value)  # stop-gradient
    left, right = _attn_halves(params)
    WH = T.matmul(H, params.weight)
    WP = T.matmul(P, params.weight)
    logits = T.leaky_relu(T.reshape(T.matmul(WH, left), (-1, 1))
                          + T.reshape(T.matmul(WP, right), (1, -1)), params.slope)
    att = T.softmax(logits, axis=1)
    return T.matmul(att, WP), att.value


@dataclass
class ClConfig:
    tau: float = 0.5
    alpha_u: float = 0.5
    alpha_k: float = 0.5
    n_user: int = 10
    n_concept: int = 10
    seed: int = 0
    sub_batch: int = 0  # 0 disables contrastive sub-batching

    def validate(self):
        if self.tau <= 0:
            raise UsageError("temperature must be positive")
        if self.alpha_u < 0 or self.alpha_k < 0:
            raise UsageError("contrastive weights must be nonnegative")


def infonce_per_anchor(H_anchor, Z_pos, Z_neg, tau) -> T.Tensor:
    """Per-anchor loss ``-s(h_i, zp_i)/tau + log sum_j exp(s(h_i, zn_j)/tau)``.

    Cosine similarity; the positive pair is not part of the denominator.
    """
    H, P, N = T.as_tensor(H_anchor), T.as_tensor(Z_pos), T.as_tensor(Z_neg)
    if not (H.shape == P.shape == N.shape) or H.ndim != 2:
        raise ShapeError(f"anchor/positive/negative shapes differ: {H.shape}, {P.shape}, {N.shape}")
    if H.shape[0] < 2:
        raise ShapeError("contrastive batch needs at least 2 rows")
    Hn = T.normalize_rows(H)
    pos = T.sum_(Hn * T.normalize_rows(P), axis=1)
    neg = T.matmul(Hn, T.transpose(T.normalize_rows(N)))
    return T.logsumexp(neg * (1.0 / tau), axis=1) - pos * (1.0 / tau)


def infonce_pair_loss(H_anchor, Z_pos, Z_neg, tau) -> T.Tensor:
    return T.sum_(infonce_per_anchor(H_anchor, Z_pos, Z_neg, tau))


def cross_view_loss(h_er, z_er, h_ir, z_ir, tau, sub_batch=0) -> T.Tensor:
    """Two-direction contrast: each view's enhancement is positive, the other view's negative."""
    n = h_er.shape[0]
    chunks = [(0, n)]
    if sub_batch and sub_batch < n:
        chunks = [(s, min(s + sub_batch, n)) for s in range(0, n, sub_batch)]
        if chunks[-1][1] - chunks[-1][0] < 2:  # merge a dangling single row
            last = chunks.pop()
            chunks[-1] = (chunks[-1][0], last[1])
    total = None
    for a, b in chunks:
        sl = lambda x: T.slice_rows(x, a, b)  # noqa: E731
        part = (infonce_pair_loss(sl(h_er), sl(z_er), sl(z_ir), tau)
                + infonce_pair_loss(sl(h_ir), sl(z_ir), sl(z_er), tau))
        total = part if total is None else total + part
    return total


def combined_cl_loss(loss_user, loss_concept, cfg: ClConfig):
    return cfg.alpha_u * loss_user + cfg.alpha_k * loss_concept
