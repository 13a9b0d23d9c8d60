import numpy as np
import pytest

from kcrec import tensor as T
from kcrec.errors import ShapeError, UsageError
from kcrec.implicit import (ImplicitParams, SelectionOperator, explain_metapaths, init_implicit,
                            multichannel_forward, path_weights, soft_select, stack_hops)
from kcrec.sparse import SparseMatrix

from conftest import toy_hin


def dense_chain(adjs, logits):
    """Dense oracle: softmax mixes and row-normalized products, straight from the definition."""
    mats = [a.to_dense() for a in adjs]

    def select(row):
        w = np.exp(row - row.max())
        w /= w.sum()
        return sum(wi * m for wi, m in zip(w, mats))

    out = select(logits[0])
    for t in range(1, len(logits)):
        rs = out.sum(axis=1, keepdims=True)
        norm = np.divide(out, rs, out=np.zeros_like(out), where=rs > 0)
        out = norm @ select(logits[t])
    return out


class TestSoftSelect:
    def test_equal_logits_mean(self, toy):
        out = soft_select(toy.adjacency, np.zeros(len(toy.adjacency))).to_dense()
        expect = sum(a.to_dense() for a in toy.adjacency) / len(toy.adjacency)
        np.testing.assert_allclose(out, expect, atol=1e-15)

    def test_identical_members(self):
        m = SparseMatrix.from_dense([[0.0, 1.0], [2.0, 0.0]])
        out = soft_select([m, m, m], np.array([3.0, -1.0, 0.2])).to_dense()
        np.testing.assert_allclose(out, m.to_dense(), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_convex_bounds(self, seed, toy):
        logits = np.random.default_rng(seed).standard_normal(len(toy.adjacency))
        out = soft_select(toy.adjacency, logits).to_dense()
        stack = np.stack([a.to_dense() for a in toy.adjacency])
        assert np.all(out <= stack.max(0) + 1e-15) and np.all(out >= stack.min(0) - 1e-15)

    def test_length_mismatch(self, toy):
        with pytest.raises(ShapeError):
            soft_select(toy.adjacency, np.zeros(2))


class TestStackHops:
    def test_single_level(self, toy):
        logits = np.random.default_rng(0).standard_normal((1, len(toy.adjacency)))
        assert stack_hops(toy, logits) == soft_select(toy.adjacency, logits[0])

    @pytest.mark.parametrize("seed", range(4))
    def test_dense_oracle_three_levels(self, seed):
        hin = toy_hin(seed)
        logits = np.random.default_rng(seed).standard_normal((3, len(hin.adjacency)))
        np.testing.assert_allclose(stack_hops(hin, logits).to_dense(), dense_chain(hin.adjacency, logits),
                                   atol=1e-10)

    def test_row_sums_bounded(self, toy):
        logits = np.random.default_rng(3).standard_normal((3, len(toy.adjacency)))
        from kcrec.sparse import degree_normalize
        sums = degree_normalize(stack_hops(toy, logits)).row_sums()
        assert np.all(sums <= 1 + 1e-12) and np.all(sums >= 0)

    def test_channel_from_params(self, toy):
        params = init_implicit(np.random.default_rng(0), len(toy.adjacency), 4, [4], 2, 3)
        chan = params.logits.value[:, 1, :]
        assert stack_hops(toy, params, channel=1) == stack_hops(toy, chan)
        with pytest.raises(UsageError):
            stack_hops(toy, params, channel=3)


class TestSelectionOperator:
    @pytest.mark.parametrize("hops", [1, 2, 3, 4])
    def test_operator_matches_materialized_chain(self, hops):
        # training uses the operator route; inspection uses stack_hops
        hin = toy_hin(hops)
        g = np.random.default_rng(hops)
        logits = g.standard_normal((hops, 1, len(hin.adjacency)))
        op = SelectionOperator(hin)
        vals = op.channel_values(T.Tensor(logits), 0)
        x = g.standard_normal((hin.n_nodes, 3))
        got = op.apply(vals, x, op.row_scale(vals)).value
        np.testing.assert_allclose(got, stack_hops(hin, logits[:, 0, :]).matmul_dense(x), atol=1e-12)


def manual_forward(hin, x, params):
    """Per-channel dense forward built from the materialized chain."""
    H = x
    graphs = []
    for c in range(params.channels):
        a = stack_hops(hin, params, channel=c).to_dense() + np.eye(hin.n_nodes)
        graphs.append(a / a.sum(axis=1, keepdims=True))
    for l in range(params.n_layers):
        HW = H @ params.weights[l].value
        cat = np.concatenate([np.tanh(a @ HW) for a in graphs], axis=1)
        H = np.tanh(cat @ params.agg_weights[l].value + params.agg_bias[l].value)
    return H


class TestMultichannel:
    @pytest.mark.parametrize("channels", [1, 2, 3])
    def test_against_dense(self, channels):
        hin = toy_hin(channels)
        g = np.random.default_rng(channels)
        params = init_implicit(g, len(hin.adjacency), 5, [4, 4], 3, channels)
        x = g.standard_normal((hin.n_nodes, 5))
        out = multichannel_forward(hin, x, params).value
        assert out.shape == (hin.n_nodes, 4)
        np.testing.assert_allclose(out, manual_forward(hin, x, params), atol=1e-12)

    def test_channel_permutation(self, toy):
        g = np.random.default_rng(9)
        params = init_implicit(g, len(toy.adjacency), 4, [3], 2, 2)
        x = g.standard_normal((toy.n_nodes, 4))
        base = multichannel_forward(toy, x, params).value
        w = params.agg_weights[0].value
        swapped = ImplicitParams(T.parameter(params.logits.value[:, ::-1, :]), params.weights,
                                 [T.parameter(np.concatenate([w[3:], w[:3]]))], params.agg_bias)
        np.testing.assert_allclose(multichannel_forward(toy, x, swapped).value, base, atol=1e-10)

    def test_logit_shape_mismatch(self, toy):
        params = init_implicit(np.random.default_rng(0), 3, 4, [4], 2, 1)
        with pytest.raises(ShapeError):
            multichannel_forward(toy, np.zeros((toy.n_nodes, 4)), params)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_include_logits(self, seed):
        hin = toy_hin(seed)
        g = np.random.default_rng(seed)
        params = init_implicit(g, len(hin.adjacency), 8, [8], 3, 2)
        params.logits.value = g.standard_normal(params.logits.shape)
        x = g.uniform(-1, 1, (hin.n_nodes, 8))
        w = g.standard_normal((hin.n_nodes, 8))
        plist = [p for _, p in params.named()]
        errs = T.gradient_errors(lambda: T.sum_(multichannel_forward(hin, x, params) * w), plist)
        assert max(errs) <= 1e-4


class TestExplain:
    def test_one_hot_recovery(self):
        logits = np.full((3, 1, 5), -10.0)
        picks = [4, 0, 2]
        for t, i in enumerate(picks):
            logits[t, 0, i] = 10.0
        rep = explain_metapaths(logits, 3, list("abcde"))
        w, seq = rep.channels[0][0]
        assert w >= 0.9 and seq == tuple(picks)

    def test_uniform_ties_lexicographic(self):
        rep = explain_metapaths(np.zeros((2, 1, 3)), 4)
        ws = [w for w, _ in rep.channels[0]]
        np.testing.assert_allclose(ws, 3.0 ** -2, atol=1e-15)
        assert [s for _, s in rep.channels[0]] == [(0, 0), (0, 1), (0, 2), (1, 0)]

    def test_report_shape_and_order(self):
        logits = np.random.default_rng(0).standard_normal((3, 2, 4))
        rep = explain_metapaths(logits, 5, ["r0", "r1", "r2", "r3"])
        rows = list(rep.rows())
        assert len(rows) == 2 * 5
        for c in range(2):
            ws = [w for w, _ in rep.channels[c]]
            assert ws == sorted(ws, reverse=True)
        assert all(len(names) == 3 and set(names) <= {"r0", "r1", "r2", "r3"} for *_, names in rows)
        lines = rep.serialize().splitlines()
        assert lines[0].split("\t") == ["channel", "rank", "weight", "type_1", "type_2", "type_3"]
        assert len(lines) == 11

    def test_weights_sum_to_one(self):
        logits = np.random.default_rng(2).standard_normal((3, 5))
        assert abs(path_weights(logits).sum() - 1) <= 1e-9

    def test_zero_top_k(self):
        with pytest.raises(UsageError):
            explain_metapaths(np.zeros((1, 1, 2)), 0)
