"""Heterogeneous information network: schema, files, adjacency set, splits.

Nodes get a contiguous global index, blocked by node type in schema order.
Adjacency follows the message-direction convention ``A[i, j] != 0`` meaning
a message flows from node ``j`` to node ``i``; for a declared edge
``name src dst`` the forward matrix therefore has its nonzeros in
(dst rows, src cols) and the inverse relation is its exact transpose.
The adjacency set holds every forward relation, then every inverse, then
the identity.
"""
from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from kcrec import rng as rngs
from kcrec.errors import ConfigError, FormatError, SchemaError, UsageError
from kcrec.sparse import SparseMatrix

log = logging.getLogger(__name__)

IDENTITY = "identity"
INVERSE_SUFFIX = "^-1"


@dataclass(frozen=True)
class EdgeType:
    name: str
    src: str
    dst: str


@dataclass(frozen=True)
class Schema:
    node_types: tuple
    edge_types: tuple
    node_counts: tuple = ()  # declared counts, None where omitted

    def __post_init__(self):
        if len(set(self.node_types)) != len(self.node_types):
            raise SchemaError("duplicate node type name")
        names = [e.name for e in self.edge_types]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate edge type name")
        for e in self.edge_types:
            for t in (e.src, e.dst):
                if t not in self.node_types:
                    raise SchemaError(f"edge type {e.name!r} references undeclared node type {t!r}")
        if not self.node_counts:
            object.__setattr__(self, "node_counts", (None,) * len(self.node_types))

    def edge(self, name: str) -> EdgeType:
        for e in self.edge_types:
            if e.name == name:
                return e
        raise SchemaError(f"unknown edge type {name!r}")

    @classmethod
    def parse(cls, text: str) -> "Schema":
        nodes, counts, edges = [], [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "node" and len(parts) in (2, 3):
                nodes.append(parts[1])
                counts.append(int(parts[2]) if len(parts) == 3 else None)
            elif parts[0] == "edge" and len(parts) == 4:
                edges.append(EdgeType(parts[1], parts[2], parts[3]))
            else:
                raise SchemaError(f"schema line {lineno}: cannot parse {raw!r}")
        try:
            return cls(tuple(nodes), tuple(edges), tuple(counts))
        except SchemaError as exc:
            raise SchemaError(f"schema: {exc}") from None

    def serialize(self) -> str:
        lines = []
        for t, c in zip(self.node_types, self.node_counts):
            lines.append(f"node {t}" if c is None else f"node {t} {c}")
        for e in self.edge_types:
            lines.append(f"edge {e.name} {e.src} {e.dst}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Relation:
    """One directed member of the adjacency set."""

    name: str
    src: str | None
    dst: str | None
    matrix: SparseMatrix = field(repr=False)


class Hin:
    """Typed node table plus the adjacency set. Immutable after construction."""

    def __init__(self, schema: Schema, counts: dict, edges: dict, timestamps: dict | None = None):
        self.schema = schema
        self.counts = {t: int(counts[t]) for t in schema.node_types}
        self.offsets = {}
        off = 0
        for t in schema.node_types:
            self.offsets[t] = off
            off += self.counts[t]
        self.n_nodes = off
        self.duplicates_dropped = 0
        self.edges = {}
        self.timestamps = {}
        timestamps = timestamps or {}
        for e in schema.edge_types:
            src, dst = edges.get(e.name, (np.zeros(0, np.int64), np.zeros(0, np.int64)))
            src = np.asarray(src, dtype=np.int64)
            dst = np.asarray(dst, dtype=np.int64)
            ts = timestamps.get(e.name)
            if src.size and (src.min() < 0 or src.max() >= self.counts[e.src]
                             or dst.min() < 0 or dst.max() >= self.counts[e.dst]):
                raise SchemaError(f"edge type {e.name!r}: node id out of range")
            order = np.lexsort((dst, src))
            src, dst = src[order], dst[order]
            keep = np.ones(src.size, dtype=bool)
            keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
            self.duplicates_dropped += int((~keep).sum())
            self.edges[e.name] = (src[keep], dst[keep])
            if ts is not None:
                # first occurrence of a duplicated edge keeps its timestamp
                self.timestamps[e.name] = np.asarray(ts, dtype=np.int64)[order][keep]
        self._build_relations()

    def _build_relations(self):
        n = self.n_nodes
        forward, inverse = [], []
        for e in self.schema.edge_types:
            src, dst = self.edges[e.name]
            rows = dst + self.offsets[e.dst]
            cols = src + self.offsets[e.src]
            fwd = SparseMatrix.from_coo(rows, cols, 1.0, (n, n))
            forward.append(Relation(e.name, e.src, e.dst, fwd))
            inverse.append(Relation(e.name + INVERSE_SUFFIX, e.dst, e.src, fwd.T))
        self.relations = forward + inverse + [Relation(IDENTITY, None, None, SparseMatrix.identity(n))]

    # -- accessors ------------------------------------------------------
    @property
    def adjacency(self) -> list:
        return [r.matrix for r in self.relations]

    @property
    def relation_names(self) -> list:
        return [r.name for r in self.relations]

    def type_range(self, node_type: str) -> tuple:
        start = self.offsets[node_type]
        return start, start + self.counts[node_type]

    def global_ids(self, node_type: str, local) -> np.ndarray:
        return np.asarray(local, dtype=np.int64) + self.offsets[node_type]

    def relation_block(self, rel: Relation) -> SparseMatrix:
        """The (dst block x src block) part of a non-identity relation."""
        r0, r1 = self.type_range(rel.dst)
        c0, c1 = self.type_range(rel.src)
        return rel.matrix.block(r0, r1, c0, c1)

    def degrees(self) -> np.ndarray:
        """Incoming edge count per node over all non-identity relations."""
        deg = np.zeros(self.n_nodes)
        for rel in self.relations[:-1]:
            deg += rel.matrix.row_sums()
        return deg

    def with_edges(self, name: str, src, dst, timestamps=None) -> "Hin":
        """Copy with the edges of one type replaced."""
        edges = dict(self.edges)
        edges[name] = (np.asarray(src), np.asarray(dst))
        ts = dict(self.timestamps)
        if timestamps is None:
            ts.pop(name, None)
        else:
            ts[name] = timestamps
        return Hin(self.schema, self.counts, edges, ts)

    def shape_digest(self) -> str:
        """Digest of node counts and declared edge types (not edge contents)."""
        h = hashlib.sha256()
        for t in self.schema.node_types:
            h.update(f"node {t} {self.counts[t]}\n".encode())
        for e in self.schema.edge_types:
            h.update(f"edge {e.name} {e.src} {e.dst}\n".encode())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, Hin):
            return NotImplemented
        if self.schema.node_types != other.schema.node_types or self.schema.edge_types != other.schema.edge_types:
            return False
        if self.counts != other.counts:
            return False
        if any(a != b for a, b in zip(self.adjacency, other.adjacency)):
            return False
        if self.timestamps.keys() != other.timestamps.keys():
            return False
        return all(np.array_equal(self.timestamps[k], other.timestamps[k]) for k in self.timestamps)

    __hash__ = None

    # -- text forms -----------------------------------------------------
    def serialize_schema(self) -> str:
        declared = Schema(self.schema.node_types, self.schema.edge_types,
                          tuple(self.counts[t] for t in self.schema.node_types))
        return declared.serialize()

    def serialize_edges(self) -> str:
        out = []
        for e in self.schema.edge_types:
            src, dst = self.edges[e.name]
            ts = self.timestamps.get(e.name)
            if ts is None:
                out.extend(f"{e.name}\t{s}\t{d}" for s, d in zip(src.tolist(), dst.tolist()))
            else:
                out.extend(f"{e.name}\t{s}\t{d}\t{t}"
                           for s, d, t in zip(src.tolist(), dst.tolist(), ts.tolist()))
        return "\n".join(out) + ("\n" if out else "")

    def save(self, directory) -> tuple:
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {directory}")
        schema_path = directory / "schema.txt"
        edge_path = directory / "edges.tsv"
        schema_path.write_text(self.serialize_schema(), encoding="utf-8")
        edge_path.write_text(self.serialize_edges(), encoding="utf-8")
        return schema_path, edge_path


# -- loading ------------------------------------------------------------------

def parse_edges(text: str, schema: Schema):
    """Parse the tab-separated edge file into per-type id arrays."""
    names = {e.name for e in schema.edge_types}
    src = {n: [] for n in names}
    dst = {n: [] for n in names}
    ts = {n: [] for n in names}
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        parts = raw.rstrip("\n").split("\t")
        if len(parts) not in (3, 4):
            raise FormatError(f"edge line {lineno}: expected 3 or 4 tab-separated fields")
        name = parts[0]
        if name not in names:
            raise SchemaError(f"edge line {lineno}: unknown edge type {name!r}")
        try:
            s, d = int(parts[1]), int(parts[2])
            t = int(parts[3]) if len(parts) == 4 else None
        except ValueError:
            raise FormatError(f"edge line {lineno}: ids must be integers") from None
        if s < 0 or d < 0:
            raise FormatError(f"edge line {lineno}: ids must be nonnegative")
        src[name].append(s)
        dst[name].append(d)
        ts[name].append(t)
    edges, stamps = {}, {}
    for name in names:
        edges[name] = (np.array(src[name], dtype=np.int64), np.array(dst[name], dtype=np.int64))
        col = ts[name]
        if col and all(t is not None for t in col):
            stamps[name] = np.array(col, dtype=np.int64)
        elif any(t is not None for t in col):
            raise FormatError(f"edge type {name!r}: timestamps present on some lines only")
    return edges, stamps


def _infer_counts(schema: Schema, edges: dict) -> dict:
    counts = {}
    for t, declared in zip(schema.node_types, schema.node_counts):
        seen = 0
        for e in schema.edge_types:
            src, dst = edges[e.name]
            if e.src == t and src.size:
                seen = max(seen, int(src.max()) + 1)
            if e.dst == t and dst.size:
                seen = max(seen, int(dst.max()) + 1)
        if declared is not None and seen > declared:
            raise SchemaError(f"node type {t!r}: id {seen - 1} exceeds declared count {declared}")
        counts[t] = declared if declared is not None else seen
    return counts


def random_features(hin: Hin, dim: int, seed: int) -> np.ndarray:
    return rngs.stream(seed, "features").uniform(-0.1, 0.1, size=(hin.n_nodes, dim))


def load_features(path, hin: Hin) -> np.ndarray:
    feats = None
    filled = np.zeros(hin.n_nodes, dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            parts = raw.rstrip("\n").split("\t")
            if parts[0] not in hin.counts:
                raise SchemaError(f"feature line {lineno}: unknown node type {parts[0]!r}")
            local = int(parts[1])
            if not 0 <= local < hin.counts[parts[0]]:
                raise FormatError(f"feature line {lineno}: node id {local} out of range")
            vec = np.array([float(v) for v in parts[2:]])
            if feats is None:
                if vec.size == 0:
                    raise FormatError(f"feature line {lineno}: no feature values")
                feats = np.zeros((hin.n_nodes, vec.size))
            if vec.size != feats.shape[1]:
                raise FormatError(f"feature line {lineno}: expected {feats.shape[1]} values, got {vec.size}")
            g = hin.offsets[parts[0]] + local
            feats[g] = vec
            filled[g] = True
    if feats is None or not filled.all():
        raise FormatError(f"feature file {path} does not cover all {hin.n_nodes} nodes")
    return feats


def load_hin(edge_path, schema_path, feature_path=None, dim=64, seed=0):
    """Load a HIN and its initial node features.

    Without a feature file, features are seeded uniform in [-0.1, 0.1].
    """
    schema = Schema.parse(Path(schema_path).read_text(encoding="utf-8"))
    edges, stamps = parse_edges(Path(edge_path).read_text(encoding="utf-8"), schema)
    hin = Hin(schema, _infer_counts(schema, edges), edges, stamps)
    if hin.duplicates_dropped:
        log.warning("dropped %d duplicate edges", hin.duplicates_dropped)
    if feature_path is not None:
        feats = load_features(feature_path, hin)
    else:
        feats = random_features(hin, dim, seed)
    return hin, feats


def load_dataset(directory, dim=64, seed=0):
    """Load ``schema.txt``, ``edges.tsv`` and optional ``features.tsv`` from a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory does not exist: {directory}")
    feature_path = directory / "features.tsv"
    return load_hin(directory / "edges.tsv", directory / "schema.txt",
                    feature_path if feature_path.exists() else None, dim, seed)


# -- interaction splits -------------------------------------------------------

@dataclass
class InteractionSplit:
    n_users: int
    n_items: int
    train: np.ndarray  # (k, 2) user, item
    test: np.ndarray  # (m, 2) user, item
    train_time: np.ndarray | None = None
    test_time: np.ndarray | None = None
    excluded_users: int = 0

    def train_positives(self) -> list:
        pos = [set() for _ in range(self.n_users)]
        for u, i in self.train.tolist():
            pos[u].add(i)
        return pos

    def all_positives(self) -> list:
        pos = self.train_positives()
        for u, i in self.test.tolist():
            pos[u].add(i)
        return pos

    def test_negatives(self, n_neg=99, seed=0) -> np.ndarray:
        """Negative candidates per test case, excluding all of the user's positives.

        Each case draws from its own sub-stream keyed by (user, item), so the
        pool does not depend on case order or on any model. Sampling is
        without replacement when enough candidates exist, otherwise with.
        """
        positives = self.all_positives()
        out = np.empty((len(self.test), n_neg), dtype=np.int64)
        for c, (u, i) in enumerate(self.test.tolist()):
            pool = np.setdiff1d(np.arange(self.n_items), np.fromiter(positives[u], np.int64))
            if pool.size == 0:
                raise UsageError(f"user {u} has interacted with every item")
            g = rngs.stream(seed, "negatives", u, i)
            out[c] = g.choice(pool, size=n_neg, replace=pool.size < n_neg)
        return out


SPLIT_POLICIES = ("ratio", "leave-one-out", "temporal")


def interaction_pairs(hin: Hin, interaction: str):
    e = hin.schema.edge(interaction)
    src, dst = hin.edges[e.name]
    return e, src, dst, hin.timestamps.get(e.name)


def split_interactions(hin: Hin, policy="leave-one-out", seed=0, interaction="click",
                       ratio=0.8, cutoff=None) -> InteractionSplit:
    e, users, items, ts = interaction_pairs(hin, interaction)
    n = users.size
    g = rngs.stream(seed, "split")
    excluded = 0
    if policy == "ratio":
        if not 0.0 < ratio < 1.0:
            raise ConfigError("split ratio must lie in (0, 1)")
        perm = g.permutation(n)
        n_train = int(round(ratio * n))
        is_test = np.zeros(n, dtype=bool)
        is_test[perm[n_train:]] = True
    elif policy == "leave-one-out":
        is_test = np.zeros(n, dtype=bool)
        tiebreak = g.random(n)
        by_user = {}
        for k, u in enumerate(users.tolist()):
            by_user.setdefault(u, []).append(k)
        for u in sorted(by_user):
            ks = by_user[u]
            if len(ks) < 2:
                excluded += 1
                continue
            if ts is not None:
                pick = max(ks, key=lambda k: (ts[k], tiebreak[k]))
            else:
                pick = max(ks, key=lambda k: tiebreak[k])
            is_test[pick] = True
        if excluded:
            log.warning("leave-one-out: %d users with fewer than 2 positives kept out of the test set", excluded)
    elif policy == "temporal":
        if ts is None:
            raise UsageError(f"temporal split needs timestamps on {interaction!r} edges")
        if cutoff is None:
            raise UsageError("temporal split needs a cutoff")
        is_test = ts >= cutoff
    else:
        raise ConfigError(f"unknown split policy {policy!r}; expected one of {SPLIT_POLICIES}")
    pairs = np.stack([users, items], axis=1)
    return InteractionSplit(
        n_users=hin.counts[e.src],
        n_items=hin.counts[e.dst],
        train=pairs[~is_test],
        test=pairs[is_test],
        train_time=None if ts is None else ts[~is_test],
        test_time=None if ts is None else ts[is_test],
        excluded_users=excluded,
    )


def training_graph(hin: Hin, split: InteractionSplit, interaction="click") -> Hin:
    """The HIN with held-out interactions removed."""
    return hin.with_edges(interaction, split.train[:, 0], split.train[:, 1], split.train_time)


# -- planted-structure generator ----------------------------------------------

@dataclass
class SynthConfig:
    groups: int = 5
    users_per_group: int = 40
    concepts_per_group: int = 20
    courses_per_group: int = 4
    videos_per_group: int = 8
    teachers: int = 10
    p_in: float = 0.3
    p_out: float = 0.01
    seed: int = 0

    def validate(self):
        for name in ("groups", "users_per_group", "concepts_per_group",
                     "courses_per_group", "videos_per_group", "teachers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth {name} must be >= 1")
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise ConfigError("synth probabilities must satisfy 0 <= p_out < p_in <= 1")


MOOC_SCHEMA_EDGES = (
    EdgeType("click", "user", "concept"),
    EdgeType("watch", "user", "video"),
    EdgeType("learn", "user", "course"),
    EdgeType("video_include", "video", "concept"),
    EdgeType("course_include", "course", "concept"),
    EdgeType("course_video", "course", "video"),
    EdgeType("taught_by", "course", "teacher"),
)
MOOC_NODE_TYPES = ("user", "concept", "course", "video", "teacher")


def _bernoulli_block(g, group_a, group_b, p_in, p_out):
    same = group_a[:, None] == group_b[None, :]
    prob = np.where(same, p_in, p_out)
    return g.random(prob.shape) < prob


def synth_hin(cfg: SynthConfig) -> Hin:
    """Planted-group HIN: every entity belongs to one of ``cfg.groups`` groups."""
    cfg.validate()
    g = rngs.stream(cfg.seed, "synth")
    k = cfg.groups
    n_u = k * cfg.users_per_group
    n_k = k * cfg.concepts_per_group
    n_c = k * cfg.courses_per_group
    n_v = k * cfg.videos_per_group
    n_t = cfg.teachers
    gu = np.arange(n_u) // cfg.users_per_group
    gk = np.arange(n_k) // cfg.concepts_per_group
    gc = np.arange(n_c) // cfg.courses_per_group
    gv = np.arange(n_v) // cfg.videos_per_group
    gt = np.arange(n_t) % k

    edges, stamps = {}, {}
    click = _bernoulli_block(g, gu, gk, cfg.p_in, cfg.p_out)
    for u in range(n_u):  # every user needs at least two clicks for leave-one-out
        while click[u].sum() < 2:
            click[u, g.choice(np.flatnonzero(gk == gu[u]))] = True
    s, d = np.nonzero(click)
    edges["click"] = (s, d)
    stamps["click"] = g.integers(1_500_000_000, 1_560_000_000, size=s.size)

    watch = _bernoulli_block(g, gu, gv, cfg.p_in, cfg.p_out)
    edges["watch"] = np.nonzero(watch)

    learn = _bernoulli_block(g, gu, gc, cfg.p_in, cfg.p_out)
    for u in range(n_u):
        if not learn[u, gc == gu[u]].any():
            learn[u, g.choice(np.flatnonzero(gc == gu[u]))] = True
    edges["learn"] = np.nonzero(learn)

    vk = _bernoulli_block(g, gv, gk, 0.2, 0.0)
    for v in range(n_v):
        if not vk[v].any():
            vk[v, g.choice(np.flatnonzero(gk == gv[v]))] = True
    edges["video_include"] = np.nonzero(vk)

    ck = _bernoulli_block(g, gc, gk, 0.5, 0.0)
    for c in range(n_c):
        if not ck[c].any():
            ck[c, g.choice(np.flatnonzero(gk == gc[c]))] = True
    edges["course_include"] = np.nonzero(ck)

    owner = np.array([g.choice(np.flatnonzero(gc == gv[v])) for v in range(n_v)], dtype=np.int64)
    edges["course_video"] = (owner, np.arange(n_v))

    teacher = []
    for c in range(n_c):
        pool = np.flatnonzero(gt == gc[c])
        teacher.append(g.choice(pool if pool.size else np.arange(n_t)))
    edges["taught_by"] = (np.arange(n_c), np.array(teacher, dtype=np.int64))

    counts = dict(zip(MOOC_NODE_TYPES, (n_u, n_k, n_c, n_v, n_t)))
    schema = Schema(MOOC_NODE_TYPES, MOOC_SCHEMA_EDGES, tuple(counts[t] for t in MOOC_NODE_TYPES))
    return Hin(schema, counts, edges, stamps)


def synth_generate(cfg: SynthConfig, out_dir) -> tuple:
    """Write ``schema.txt`` and ``edges.tsv`` for a planted-group HIN."""
    cfg.validate()
    if not os.path.isdir(out_dir):
        raise FileNotFoundError(f"output directory does not exist: {out_dir}")
    return synth_hin(cfg).save(out_dir)


def user_groups(cfg: SynthConfig) -> np.ndarray:
    return np.arange(cfg.groups * cfg.users_per_group) // cfg.users_per_group
