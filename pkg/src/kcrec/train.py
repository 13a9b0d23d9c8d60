"""Training loop, 1+99 ranking evaluation and the ablation suite."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from kcrec import rng as rngs
from kcrec import tensor as T
from kcrec.config import VARIANTS, RunConfig
from kcrec.errors import NumericalAbort, UsageError
from kcrec.hin import Hin, InteractionSplit
from kcrec.model import KCRec, bpr_loss, total_loss  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

REPORT_VERSION = 1
PLATEAU_TOL = 1e-4


# -- triples --------------------------------------------------------------------

def positive_matrix(split: InteractionSplit, include_test=True) -> np.ndarray:
    """Dense (users, items) boolean mask of positives."""
    mask = np.zeros((split.n_users, split.n_items), dtype=bool)
    mask[split.train[:, 0], split.train[:, 1]] = True
    if include_test and len(split.test):
        mask[split.test[:, 0], split.test[:, 1]] = True
    return mask


def sample_triples(split: InteractionSplit, batch: int, seed=0, epoch=0) -> list:
    """One epoch of (user, positive, negative) triples cut into batches.

    Every train positive appears once, in shuffled order. Negatives are
    drawn uniformly and redrawn until they avoid all of the user's
    positives. Users whose positives cover every item are dropped.
    """
    if batch < 1:
        raise UsageError("batch size must be >= 1")
    pos_mask = positive_matrix(split)
    full = pos_mask.all(axis=1)
    pairs = split.train
    if full.any():
        log.warning("%d users interacted with every item; their triples are skipped", int(full.sum()))
        pairs = pairs[~full[pairs[:, 0]]]
    g = rngs.stream(seed, "sampling", epoch)
    pairs = pairs[g.permutation(len(pairs))]
    users = pairs[:, 0]
    neg = g.integers(split.n_items, size=len(pairs))
    bad = pos_mask[users, neg]
    while bad.any():
        neg[bad] = g.integers(split.n_items, size=int(bad.sum()))
        bad = pos_mask[users, neg]
    triples = np.column_stack([users, pairs[:, 1], neg]).astype(np.int64)
    return [triples[s:s + batch] for s in range(0, len(triples), batch)]


# -- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    model: KCRec
    losses: list = field(default_factory=list)  # mean batch loss per epoch
    stopped_early: bool = False

    def trace_text(self) -> str:
        return "".join(f"{e}\t{loss!r}\n" for e, loss in enumerate(self.losses, 1))


def _norms(model):
    return {name: float(np.linalg.norm(p.value)) for name, p in model.named_parameters()}


def plateaued(losses, patience, tol=PLATEAU_TOL) -> bool:
    """True once the last ``patience`` epochs improved the best loss by less than ``tol`` (relative)."""
    if patience < 1 or len(losses) <= patience:
        return False
    best_before = min(losses[:-patience])
    recent = min(losses[-patience:])
    return recent > best_before - tol * abs(best_before)


def train(hin: Hin, features, split: InteractionSplit, cfg: RunConfig, model=None,
          callback=None) -> TrainResult:
    """Fit a model on the training graph ``hin`` with the split's train positives."""
    cfg = cfg.resolved()
    model = KCRec(hin, features, cfg) if model is None else model
    params = model.active_parameters()
    opt = T.AdamState(lr=cfg.lr)
    result = TrainResult(model)
    for epoch in range(cfg.epochs):
        model.refresh_prototypes(key=(epoch + 1,))
        batches = sample_triples(split, cfg.batch, cfg.seed, epoch)
        total = 0.0
        for b, triples in enumerate(batches):
            with T.Tape() as tape:
                loss = model.batch_loss(triples[:, 0], triples[:, 1], triples[:, 2])
            value = float(loss.value)
            if not math.isfinite(value):
                raise NumericalAbort(
                    f"non-finite loss at epoch {epoch + 1}, batch {b + 1}",
                    {"epoch": epoch + 1, "batch": b + 1, "loss": value, "param_norms": _norms(model)})
            grads = tape.backward(loss, params)
            T.adam_step(opt, params, grads)
            total += value
        result.losses.append(total / max(len(batches), 1))
        if callback is not None:
            callback(epoch + 1, result.losses[-1])
        if plateaued(result.losses, cfg.patience):
            result.stopped_early = True
            break
    return result


# -- evaluation ------------------------------------------------------------------

def rank_of_positive(pos_score, pos_id, neg_scores, neg_ids) -> int:
    """1-based rank under descending score, ties broken by ascending item id."""
    neg_scores = np.asarray(neg_scores)
    neg_ids = np.asarray(neg_ids)
    ahead = (neg_scores > pos_score) | ((neg_scores == pos_score) & (neg_ids < pos_id))
    return 1 + int(ahead.sum())


def hit_ratio(ranks, k) -> float:
    return float(np.mean(np.asarray(ranks) <= k))


def ndcg(ranks, k) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    return float(np.mean(np.where(r <= k, 1.0 / np.log2(r + 1.0), 0.0)))


def mrr(ranks) -> float:
    return float(np.mean(1.0 / np.asarray(ranks, dtype=np.float64)))


@dataclass
class RankingReport:
    ranks: np.ndarray
    ks: tuple = (5, 10, 20)
    seed: int = 0
    config_digest: str = ""
    skipped: int = 0

    @property
    def hr(self) -> dict:
        return {k: hit_ratio(self.ranks, k) for k in self.ks}

    @property
    def ndcg(self) -> dict:
        return {k: ndcg(self.ranks, k) for k in self.ks}

    @property
    def mrr(self) -> float:
        return mrr(self.ranks)

    def summary(self) -> str:
        parts = [f"HR@{k}={v:.4f}" for k, v in self.hr.items()]
        parts += [f"NDCG@{k}={v:.4f}" for k, v in self.ndcg.items()]
        parts.append(f"MRR={self.mrr:.4f}")
        return " ".join(parts)

    def serialize(self) -> str:
        lines = [
            f"report_version={REPORT_VERSION}",
            f"seed={self.seed}",
            f"config_digest={self.config_digest}",
            f"cases={len(self.ranks)}",
            f"skipped={self.skipped}",
        ]
        for k, v in self.hr.items():
            lines.append(f"hr@{k}={v!r}")
        for k, v in self.ndcg.items():
            lines.append(f"ndcg@{k}={v!r}")
        lines.append(f"mrr={self.mrr!r}")
        lines.append("ranks=" + ",".join(str(int(r)) for r in self.ranks))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RankingReport":
        from kcrec.errors import FormatError
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k] = v
        try:
            if int(kv["report_version"]) != REPORT_VERSION:
                raise FormatError(f"unsupported report version {kv['report_version']}")
            ranks = np.array([int(r) for r in kv["ranks"].split(",") if r], dtype=np.int64)
            ks = tuple(sorted(int(k[3:]) for k in kv if k.startswith("hr@")))
            return cls(ranks, ks, int(kv["seed"]), kv["config_digest"], int(kv["skipped"]))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"malformed ranking report: {exc}") from None


def evaluate(scorer, split: InteractionSplit, n_neg=99, ks=(5, 10, 20), seed=0,
             skip_users=None, config_digest="") -> RankingReport:
    """Rank every test positive against ``n_neg`` sampled negatives.

    ``scorer`` is a trained :class:`KCRec` or a dense (users, items) score
    array. Users flagged in ``skip_users`` (by default: users with no edges
    in the model's training graph) are skipped and counted.
    """
    if len(split.test) == 0:
        raise UsageError("no test cases to evaluate")
    if isinstance(scorer, KCRec):
        scores = scorer.score_matrix()
        if skip_users is None:
            skip_users = scorer.user_degrees() == 0
        config_digest = config_digest or scorer.cfg.digest()
    else:
        scores = np.asarray(scorer, dtype=np.float64)
    if skip_users is None:
        skip_users = np.zeros(split.n_users, dtype=bool)
    negs = split.test_negatives(n_neg, seed)
    ranks, skipped = [], 0
    for (u, i), neg in zip(split.test.tolist(), negs):
        if skip_users[u]:
            skipped += 1
            continue
        ranks.append(rank_of_positive(scores[u, i], i, scores[u, neg], neg))
    if skipped:
        log.warning("%d test cases skipped: user absent from the training graph", skipped)
    return RankingReport(np.array(ranks, dtype=np.int64), tuple(ks), seed, config_digest, skipped)


def recommend(scores_row, exclude, n) -> list:
    """Top ``n`` item ids by descending score, ties by id, skipping ``exclude``."""
    if n < 1:
        raise UsageError("N must be >= 1")
    scores_row = np.asarray(scores_row)
    ids = np.arange(scores_row.size)
    keep = np.ones(scores_row.size, dtype=bool)
    keep[list(exclude)] = False
    ids = ids[keep]
    order = np.lexsort((ids, -scores_row[ids]))
    return ids[order][:n].tolist()


# -- ablations -------------------------------------------------------------------

@dataclass
class AblationReport:
    variants: tuple
    seeds: tuple
    metrics: dict  # variant -> {metric name: mean over seeds}
    per_seed: dict  # variant -> list of RankingReport

    def serialize(self) -> str:
        names = list(next(iter(self.metrics.values())).keys())
        lines = ["variant\t" + "\t".join(names)]
        for v in self.variants:
            lines.append(v + "\t" + "\t".join(f"{self.metrics[v][n]:.6f}" for n in names))
        return "\n".join(lines) + "\n"


def _metric_row(report: RankingReport) -> dict:
    row = {f"HR@{k}": v for k, v in report.hr.items()}
    row.update({f"NDCG@{k}": v for k, v in report.ndcg.items()})
    row["MRR"] = report.mrr
    return row


def run_once(hin: Hin, features, split: InteractionSplit, cfg: RunConfig):
    """Train on the split's training graph and evaluate; returns (TrainResult, RankingReport)."""
    from kcrec.hin import training_graph
    graph = training_graph(hin, split, cfg.interaction)
    result = train(graph, features, split, cfg)
    report = evaluate(result.model, split, cfg.eval_negatives, tuple(cfg.k_list), cfg.seed)
    return result, report


def ablation_suite(hin: Hin, features, split: InteractionSplit, base: RunConfig, seeds,
                   variants=VARIANTS) -> AblationReport:
    """Train and evaluate every variant under shared seeds."""
    seeds = tuple(seeds)
    if not seeds:
        raise UsageError("ablation needs at least one seed")
    metrics, per_seed = {}, {}
    for v in variants:
        reports = []
        for s in seeds:
            cfg = base.with_variant(v)
            cfg.seed = s
            reports.append(run_once(hin, features, split, cfg)[1])
        per_seed[v] = reports
        rows = [_metric_row(r) for r in reports]
        metrics[v] = {k: float(np.mean([row[k] for row in rows])) for k in rows[0]}
    return AblationReport(tuple(variants), seeds, metrics, per_seed)
