import numpy as np
import pytest

from kcrec.errors import ConfigError, FormatError, SchemaError, UsageError
from kcrec.hin import (MOOC_NODE_TYPES, MOOC_SCHEMA_EDGES, Hin, Schema, SynthConfig,
                       load_dataset, load_hin, split_interactions, synth_generate, synth_hin,
                       training_graph, user_groups)
from kcrec.sparse import SparseMatrix

from conftest import TOY_SCHEMA

SCHEMA_TEXT = "node user\nnode concept\n# comment\nedge click user concept\n"


class TestSchema:
    def test_parse_and_serialize(self):
        s = Schema.parse(SCHEMA_TEXT)
        assert s.node_types == ("user", "concept")
        assert Schema.parse(s.serialize()) == s

    def test_duplicate_names(self):
        with pytest.raises(SchemaError):
            Schema.parse("node a\nnode a\n")

    def test_undeclared_endpoint(self):
        with pytest.raises(SchemaError, match="X"):
            Schema.parse("node a\nedge e a X\n")

    def test_garbage_line_reports_line(self):
        with pytest.raises(SchemaError, match="line 2"):
            Schema.parse("node a\nnodes b\n")


class TestLoading:
    def write(self, tmp_path, edges, schema=SCHEMA_TEXT):
        (tmp_path / "schema.txt").write_text(schema)
        (tmp_path / "edges.tsv").write_text(edges)
        return tmp_path / "edges.tsv", tmp_path / "schema.txt"

    def test_three_edges(self, tmp_path):
        hin, feats = load_hin(*self.write(tmp_path, "click\t0\t0\nclick\t1\t2\nclick\t2\t1\n"), dim=4)
        assert len(hin.adjacency) == 2 * 1 + 1
        assert hin.adjacency[0].nnz == 3 and hin.adjacency[1].nnz == 3
        assert feats.shape == (hin.n_nodes, 4)
        assert np.all(np.abs(feats) <= 0.1)

    def test_unknown_edge_type_named_with_line(self, tmp_path):
        with pytest.raises(SchemaError, match=r"line 2.*'X'"):
            load_hin(*self.write(tmp_path, "click\t0\t0\nX\t1\t2\n"))

    def test_duplicates_collapse(self, tmp_path):
        hin, _ = load_hin(*self.write(tmp_path, "click\t0\t1\nclick\t0\t1\n"))
        assert hin.duplicates_dropped == 1
        assert hin.adjacency[0].nnz == 1
        assert hin.adjacency[0].data.max() == 1.0

    def test_bad_field_count(self, tmp_path):
        with pytest.raises(FormatError):
            load_hin(*self.write(tmp_path, "click\t0\n"))

    def test_feature_file(self, tmp_path):
        e, s = self.write(tmp_path, "click\t0\t0\n")
        (tmp_path / "f.tsv").write_text("user\t0\t1.5\t2\nconcept\t0\t-1\t0\n")
        _, feats = load_hin(e, s, tmp_path / "f.tsv")
        np.testing.assert_array_equal(feats, [[1.5, 2.0], [-1.0, 0.0]])

    def test_feature_file_must_cover_nodes(self, tmp_path):
        e, s = self.write(tmp_path, "click\t0\t0\n")
        (tmp_path / "f.tsv").write_text("user\t0\t1.5\n")
        with pytest.raises(FormatError):
            load_hin(e, s, tmp_path / "f.tsv")

    def test_save_load_fixed_point(self, tmp_path):
        hin = synth_hin(SynthConfig(groups=2, users_per_group=5, concepts_per_group=4, seed=1))
        hin.save(tmp_path)
        back, _ = load_dataset(tmp_path, dim=4)
        assert back == hin
        back.save(tmp_path)
        again, _ = load_dataset(tmp_path, dim=4)
        assert again == hin

    def test_mooc_scale_counts(self, tmp_path):
        # a conforming file at the full dataset's published size
        g = np.random.default_rng(0)
        n_u, n_k, n_uk = 2204, 1522, 928476
        flat = g.choice(n_u * n_k, size=n_uk, replace=False)
        users, concepts = flat // n_k, flat % n_k
        schema = "".join(f"node {t}\n" for t in MOOC_NODE_TYPES)
        schema += "".join(f"edge {e.name} {e.src} {e.dst}\n" for e in MOOC_SCHEMA_EDGES)
        lines = [f"click\t{u}\t{k}" for u, k in zip(users.tolist(), concepts.tolist())]
        lines += ["watch\t0\t0", "learn\t0\t0", "video_include\t0\t0", "course_include\t0\t0",
                  "course_video\t0\t0", "taught_by\t0\t0"]
        hin, _ = load_hin(*self.write(tmp_path, "\n".join(lines) + "\n", schema), dim=2)
        assert len(hin.schema.node_types) == 5 and len(hin.schema.edge_types) == 7
        assert hin.counts["user"] == n_u and hin.counts["concept"] == n_k
        assert hin.edges["click"][0].size == n_uk


class TestAdjacency:
    def test_block_structure_and_direction(self, toy):
        for rel in toy.relations[:3]:
            r, c, _ = rel.matrix.to_coo()
            r0, r1 = toy.type_range(rel.dst)
            c0, c1 = toy.type_range(rel.src)
            assert np.all((r >= r0) & (r < r1) & (c >= c0) & (c < c1))
        src, dst = toy.edges["click"]
        a = toy.adjacency[0].to_dense()
        assert np.all(a[toy.global_ids("concept", dst), toy.global_ids("user", src)] == 1)

    def test_inverses_are_transposes(self, toy):
        k = len(toy.schema.edge_types)
        for i in range(k):
            assert toy.adjacency[k + i] == toy.adjacency[i].T
            assert toy.relation_names[k + i] == toy.relation_names[i] + "^-1"

    def test_identity_last(self, toy):
        assert len(toy.adjacency) == 2 * 3 + 1
        assert toy.adjacency[-1] == SparseMatrix.identity(toy.n_nodes)

    def test_degrees_exclude_identity(self, toy):
        expect = sum(a.to_dense().sum(axis=1) for a in toy.adjacency[:-1])
        np.testing.assert_array_equal(toy.degrees(), expect)

    def test_out_of_range_ids(self):
        with pytest.raises(SchemaError):
            Hin(TOY_SCHEMA, {"user": 1, "concept": 1, "course": 1},
                {"click": (np.array([0]), np.array([5]))})


def interaction_hin(n_users=10, per_user=10, n_items=30, seed=0, stamps=True):
    g = np.random.default_rng(seed)
    u = np.repeat(np.arange(n_users), per_user)
    k = np.concatenate([g.choice(n_items, per_user, replace=False) for _ in range(n_users)])
    ts = g.permutation(u.size) if stamps else None
    schema = Schema(("user", "concept"), (TOY_SCHEMA.edge_types[0],))
    return Hin(schema, {"user": n_users, "concept": n_items}, {"click": (u, k)},
               {"click": ts} if stamps else None)


class TestSplits:
    def test_ratio(self):
        s = split_interactions(interaction_hin(), "ratio", seed=0, ratio=0.8)
        assert len(s.train) == 80 and len(s.test) == 20

    def test_disjoint(self):
        s = split_interactions(interaction_hin(), "ratio", seed=1)
        tr = {tuple(p) for p in s.train.tolist()}
        assert not tr & {tuple(p) for p in s.test.tolist()}

    def test_leave_one_out_latest(self):
        hin = interaction_hin()
        s = split_interactions(hin, "leave-one-out", seed=0)
        users, counts = np.unique(s.test[:, 0], return_counts=True)
        assert users.size == 10 and np.all(counts == 1)
        for u, t in zip(s.test[:, 0], s.test_time):
            assert t >= s.train_time[s.train[:, 0] == u].max()

    def test_leave_one_out_excludes_singletons(self):
        schema = Schema(("user", "concept"), (TOY_SCHEMA.edge_types[0],))
        hin = Hin(schema, {"user": 2, "concept": 3}, {"click": (np.array([0, 0, 1]), np.array([0, 1, 2]))})
        s = split_interactions(hin, "leave-one-out")
        assert s.excluded_users == 1 and s.test[:, 0].tolist() == [0]

    def test_temporal(self):
        s = split_interactions(interaction_hin(), "temporal", cutoff=60)
        assert s.test_time.min() >= 60 and s.train_time.max() < 60

    def test_temporal_needs_stamps(self):
        with pytest.raises(UsageError):
            split_interactions(interaction_hin(stamps=False), "temporal", cutoff=1)

    def test_unknown_policy(self):
        with pytest.raises(ConfigError):
            split_interactions(interaction_hin(), "random")

    def test_negatives_exclude_positives_and_repeat(self):
        s = split_interactions(interaction_hin(), "leave-one-out", seed=0)
        pos = s.all_positives()
        negs = s.test_negatives(15, seed=4)
        for (u, _), row in zip(s.test.tolist(), negs):
            assert not set(row.tolist()) & pos[u]
            assert len(set(row.tolist())) == 15  # pool of 20 allows sampling without replacement
        np.testing.assert_array_equal(negs, s.test_negatives(15, seed=4))

    def test_negatives_small_pool_with_replacement(self):
        s = split_interactions(interaction_hin(), "leave-one-out", seed=0)
        negs = s.test_negatives(99, seed=0)
        assert negs.shape == (10, 99)

    def test_training_graph_drops_test_edges(self):
        hin = interaction_hin()
        s = split_interactions(hin, "leave-one-out", seed=0)
        g = training_graph(hin, s)
        a = g.adjacency[0].to_dense()
        off = g.offsets["concept"]
        for u, k in s.test.tolist():
            assert a[off + k, u] == 0


class TestSynth:
    def test_deterministic_bytes(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        cfg = SynthConfig(seed=7)
        synth_generate(cfg, tmp_path / "a")
        synth_generate(cfg, tmp_path / "b")
        for f in ("schema.txt", "edges.tsv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nowhere"):
            synth_generate(SynthConfig(), tmp_path / "nowhere")

    def test_schema_mirrors_mooc(self):
        hin = synth_hin(SynthConfig())
        assert hin.schema.node_types == MOOC_NODE_TYPES
        assert len(hin.schema.edge_types) == 7
        assert hin.counts["user"] == 200 and hin.counts["concept"] == 100

    def test_declared_counts_match(self, tmp_path):
        hin = synth_hin(SynthConfig(seed=2))
        hin.save(tmp_path)
        declared = Schema.parse((tmp_path / "schema.txt").read_text()).node_counts
        assert declared == tuple(hin.counts[t] for t in hin.schema.node_types)

    def test_zero_counts_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(groups=0).validate()
        with pytest.raises(ConfigError):
            SynthConfig(p_in=0.01, p_out=0.3).validate()

    def test_shared_concepts_planted(self):
        cfg = SynthConfig(seed=0)
        hin = synth_hin(cfg)
        u, k = hin.edges["click"]
        m = np.zeros((hin.counts["user"], hin.counts["concept"]))
        m[u, k] = 1
        shared = m @ m.T
        grp = user_groups(cfg)
        same = grp[:, None] == grp[None, :]
        np.fill_diagonal(same, False)
        cross = grp[:, None] != grp[None, :]
        assert shared[same].mean() >= 5 * shared[cross].mean()

    def test_every_user_clicks_twice(self):
        hin = synth_hin(SynthConfig(seed=5))
        counts = np.bincount(hin.edges["click"][0], minlength=hin.counts["user"])
        assert counts.min() >= 2
