"""The full recommender: both relation views, prototype enhancement, fusion, scoring."""
from __future__ import annotations

import numpy as np

from kcrec import rng as rngs
from kcrec import tensor as T
from kcrec.config import RunConfig
from kcrec.errors import ShapeError, UsageError
from kcrec.explicit import ExplicitStructure, explicit_forward, init_explicit
from kcrec.fusion import fuse, fusion_used, init_fusion, predict_score
from kcrec.hin import Hin
from kcrec.implicit import SelectionOperator, init_implicit, multichannel_forward
from kcrec.proto import cross_view_loss, gat_encode_batch, init_gat, kmeans_prototypes

SIDES = ("user", "concept")
VIEWS = ("er", "ir")


class KCRec:
    """Model parameters plus the fixed graph and node features they run on.

    Every parameter group is created regardless of ablation flags so the
    checkpoint layout is the same for all variants; only the groups an
    ablation actually uses are trained.
    """

    def __init__(self, hin: Hin, features, cfg: RunConfig):
        cfg = cfg.resolved()
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.shape != (hin.n_nodes, cfg.d0):
            raise ShapeError(f"features must be {(hin.n_nodes, cfg.d0)}, got {features.shape}")
        self.hin = hin
        self.cfg = cfg
        self.features = features
        self.structure = ExplicitStructure(hin)
        self.operator = SelectionOperator(hin)
        self.user_range = hin.type_range(cfg.user_type)
        self.item_range = hin.type_range(cfg.item_type)
        if cfg.protos_user > self.n_users or cfg.protos_concept > self.n_items:
            raise UsageError("more prototypes requested than nodes of that type")

        g = rngs.stream(cfg.seed, "init")
        d = cfg.d1
        self.basis, self.explicit = init_explicit(
            g, self.structure.n_relations, cfg.d0, [d] * cfg.er_layers, cfg.bases)
        self.implicit = init_implicit(g, len(hin.adjacency), cfg.d0, [d] * cfg.ir_layers,
                                      cfg.hops, cfg.channels)
        self.gat = {(s, v): init_gat(g, d) for s in SIDES for v in VIEWS}
        d_in = d if cfg.no_cl else 2 * d
        self.fusion = {s: init_fusion(g, d_in, cfg.d_fused, with_concat=True) for s in SIDES}
        self.prototypes = {}

    # -- sizes and parameter bookkeeping -------------------------------
    @property
    def n_users(self) -> int:
        return self.user_range[1] - self.user_range[0]

    @property
    def n_items(self) -> int:
        return self.item_range[1] - self.item_range[0]

    def named_parameters(self) -> list:
        out = self.basis.named("explicit") + self.explicit.named("explicit")
        out += self.implicit.named("implicit")
        for (s, v), p in self.gat.items():
            out += p.named(f"gat.{s}.{v}")
        for s, p in self.fusion.items():
            out += p.named(f"fusion.{s}")
        return out

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def active_parameters(self) -> list:
        """Parameters the configured variant touches, in ``named_parameters`` order."""
        cfg = self.cfg
        active = []
        if "er" in cfg.views:
            active += [self.basis.bases, self.basis.coeffs]
            active += [p for _, p in self.explicit.named()]
        if "ir" in cfg.views:
            active += [p for _, p in self.implicit.named()]
        if cfg.contrastive:
            for s in SIDES:
                for v in cfg.views:
                    active += [p for _, p in self.gat[(s, v)].named("")]
        for s in SIDES:
            # a per-user constant added to every item score cannot change BPR or rankings
            active += fusion_used(self.fusion[s], cfg.fusion, cfg.views, output_bias=(s == "user"))
        ids = {id(p) for p in active}
        return [p for p in self.parameters() if id(p) in ids]

    def state(self) -> dict:
        return {name: p.value for name, p in self.named_parameters()}

    def load_state(self, arrays: dict):
        for name, p in self.named_parameters():
            if name not in arrays:
                raise UsageError(f"missing parameter {name!r}")
            v = np.asarray(arrays[name], dtype=np.float64)
            if v.shape != p.shape:
                raise ShapeError(f"parameter {name!r}: expected {p.shape}, got {v.shape}")
            p.value = v.copy()

    # -- forward ---------------------------------------------------------
    def encode(self) -> dict:
        """Node representations of every active view, each (N, d)."""
        out = {}
        if "er" in self.cfg.views:
            out["er"] = explicit_forward(self.structure, self.features, self.basis, self.explicit)
        if "ir" in self.cfg.views:
            out["ir"] = multichannel_forward(self.operator, self.features, self.implicit)
        return out

    def _side_rows(self, H, side, local_ids):
        start = self.user_range[0] if side == "user" else self.item_range[0]
        return T.take_rows(H, np.asarray(local_ids, dtype=np.int64) + start)

    def refresh_prototypes(self, encoded=None, key=()):
        """Re-cluster every (side, view) from current representations.

        ``key`` picks the clustering sub-stream; training passes the epoch.
        """
        if not self.cfg.contrastive:
            self.prototypes = {}
            return self.prototypes
        encoded = self.encode() if encoded is None else encoded
        counts = {"user": self.cfg.protos_user, "concept": self.cfg.protos_concept}
        for side in SIDES:
            r0, r1 = self.user_range if side == "user" else self.item_range
            for view, H in encoded.items():
                self.prototypes[(side, view)] = kmeans_prototypes(
                    np.asarray(H.value[r0:r1]), counts[side], seed=self.cfg.seed, key=key)
        return self.prototypes

    def represent(self, encoded, side, local_ids):
        """Fused representations for some users or concepts.

        Returns ``(fused, parts)`` where ``parts`` maps each view to its
        ``(h, z)`` pair (``z`` is None without the contrastive branch).
        """
        parts = {}
        for view, H in encoded.items():
            h = self._side_rows(H, side, local_ids)
            z = None
            if self.cfg.contrastive:
                z, _ = gat_encode_batch(h, self.prototypes[(side, view)], self.gat[(side, view)])
            parts[view] = (h, z)
        joined = {v: (h if z is None else T.concat([h, z], axis=1)) for v, (h, z) in parts.items()}
        fused = fuse(joined.get("er"), joined.get("ir"), self.fusion[side], self.cfg.fusion)
        return fused, parts

    def contrastive_loss(self, parts) -> T.Tensor | None:
        if not self.cfg.cross_view_cl:
            return None
        (h_er, z_er), (h_ir, z_ir) = parts["er"], parts["ir"]
        if h_er.shape[0] < 2:
            return None
        return cross_view_loss(h_er, z_er, h_ir, z_ir, self.cfg.tau, self.cfg.cl_sub_batch)

    def batch_loss(self, users, pos, neg) -> T.Tensor:
        """BPR sum + L2 + weighted contrastive term for one batch of triples."""
        cfg = self.cfg
        encoded = self.encode()
        uniq_u, inv_u = np.unique(users, return_inverse=True)
        uniq_k, inv_k = np.unique(np.concatenate([pos, neg]), return_inverse=True)
        fu, parts_u = self.represent(encoded, "user", uniq_u)
        fk, parts_k = self.represent(encoded, "concept", uniq_k)
        b = len(users)
        U = T.take_rows(fu, inv_u)
        s_pos = predict_score(U, T.take_rows(fk, inv_k[:b]))
        s_neg = predict_score(U, T.take_rows(fk, inv_k[b:]))
        loss = bpr_loss(s_pos, s_neg, self.active_parameters(), cfg.l2)
        l_u = self.contrastive_loss(parts_u)
        l_k = self.contrastive_loss(parts_k)
        if l_u is not None or l_k is not None:
            cl = None
            if l_u is not None:
                cl = cfg.alpha_u * l_u
            if l_k is not None:
                cl = cfg.alpha_k * l_k if cl is None else cl + cfg.alpha_k * l_k
            loss = total_loss(loss, cl, cfg.beta)
        return loss

    def fused_all(self):
        """Fused representations of all users and all concepts as arrays."""
        encoded = self.encode()
        self.refresh_prototypes(encoded)
        fu, _ = self.represent(encoded, "user", np.arange(self.n_users))
        fk, _ = self.represent(encoded, "concept", np.arange(self.n_items))
        return fu.value, fk.value

    def score_matrix(self) -> np.ndarray:
        """(n_users, n_items) scores with prototypes re-clustered from the final parameters."""
        fu, fk = self.fused_all()
        return fu @ fk.T

    def user_degrees(self) -> np.ndarray:
        deg = self.hin.degrees()
        return deg[self.user_range[0]:self.user_range[1]]


def bpr_loss(scores_pos, scores_neg, params, l2) -> T.Tensor:
    """``sum -log sigmoid(pos - neg) + l2 * ||params||^2``."""
    scores_pos, scores_neg = T.as_tensor(scores_pos), T.as_tensor(scores_neg)
    if scores_pos.shape != scores_neg.shape:
        raise ShapeError(f"score vectors differ: {scores_pos.shape} vs {scores_neg.shape}")
    loss = -T.sum_(T.log_sigmoid(scores_pos - scores_neg))
    if l2 and params:
        loss = loss + l2 * T.sum_squares(params)
    return loss


def total_loss(l_bpr, l_cl, beta) -> T.Tensor:
    if l_cl is None:
        return T.as_tensor(l_bpr)
    return l_bpr + beta * l_cl
