import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kcrec import tensor as T
from kcrec.errors import ShapeError, UsageError
from kcrec.fusion import (FusionParams, concat_views, dual_head_fuse, fuse, fusion_used, init_fusion,
                          predict_score, view_value)


def mapped(h, W, b, p):
    return np.tanh(h @ W.value + b.value) @ p.W_v.value + p.b_v.value


class TestConcat:
    def test_order_and_width(self):
        out = concat_views(np.zeros(2), np.array([3.0, 4.0, 5.0])).value
        np.testing.assert_array_equal(out, [0.0, 0.0, 3.0, 4.0, 5.0])

    def test_batched(self):
        assert concat_views(np.ones((4, 3)), np.ones((4, 3))).shape == (4, 6)


class TestDualHead:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_weights_sum_to_one_and_convex(self, seed, B):
        g = np.random.default_rng(seed)
        p = init_fusion(g, 4, 3)
        p.b_s.value = g.standard_normal(1)
        he, hi = g.standard_normal((B, 4)), g.standard_normal((B, 4))
        out, w = dual_head_fuse(he, hi, p, return_weights=True)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        rebuilt = w[:, :1] * mapped(he, p.W_er, p.b_er, p) + w[:, 1:] * mapped(hi, p.W_ir, p.b_ir, p)
        np.testing.assert_allclose(out.value, rebuilt, atol=1e-10)

    def test_symmetric_inputs_split_evenly(self):
        g = np.random.default_rng(0)
        p = init_fusion(g, 4, 4)
        p.W_ir, p.b_ir = p.W_er, p.b_er
        h = g.standard_normal(4)
        out, w = dual_head_fuse(h, h, p, return_weights=True)
        np.testing.assert_allclose(w, [[0.5, 0.5]], atol=1e-15)
        np.testing.assert_allclose(out.value, view_value(h, p.W_er, p.b_er, p).value, atol=1e-15)

    def test_swap_views_with_params(self):
        g = np.random.default_rng(1)
        p = init_fusion(g, 3, 2)
        he, hi = g.standard_normal((5, 3)), g.standard_normal((5, 3))
        swapped = FusionParams(p.W_ir, p.b_ir, p.W_er, p.b_er, p.W_v, p.b_v, p.W_s, p.b_s)
        np.testing.assert_allclose(dual_head_fuse(hi, he, swapped).value, dual_head_fuse(he, hi, p).value,
                                   atol=1e-10)

    def test_attention_bias_cancels(self):
        g = np.random.default_rng(4)
        p = init_fusion(g, 4, 3)
        he, hi = g.standard_normal((3, 4)), g.standard_normal((3, 4))
        base = dual_head_fuse(he, hi, p).value
        p.b_s.value = np.array([7.5])
        np.testing.assert_allclose(dual_head_fuse(he, hi, p).value, base, atol=1e-12)
        assert all(t is not p.b_s for t in fusion_used(p, "attention", ("er", "ir")))

    def test_single_vector_shape(self):
        p = init_fusion(np.random.default_rng(0), 4, 3)
        assert dual_head_fuse(np.ones(4), np.ones(4), p).shape == (3,)

    def test_width_mismatch(self):
        p = init_fusion(np.random.default_rng(0), 4, 3)
        with pytest.raises(ShapeError):
            dual_head_fuse(np.ones(3), np.ones(4), p)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        g = np.random.default_rng(seed)
        p = init_fusion(g, 4, 3)
        for _, t in p.named("f"):
            t.value = t.value + 0.1 * g.standard_normal(t.shape)
        he, hi = T.parameter(g.standard_normal((3, 4))), T.parameter(g.standard_normal((3, 4)))
        w = g.standard_normal((3, 3))
        plist = fusion_used(p, "attention", ("er", "ir")) + [he, hi]
        assert max(T.gradient_errors(lambda: T.sum_(dual_head_fuse(he, hi, p) * w), plist)) <= 1e-4


class TestModes:
    def setup_method(self):
        g = np.random.default_rng(2)
        self.p = init_fusion(g, 4, 3, with_concat=True)
        self.he, self.hi = g.standard_normal((2, 4)), g.standard_normal((2, 4))

    def test_add(self):
        p = self.p
        out = fuse(self.he, self.hi, p, "add").value
        np.testing.assert_allclose(out, mapped(self.he, p.W_er, p.b_er, p) + mapped(self.hi, p.W_ir, p.b_ir, p),
                                   atol=1e-14)

    def test_concat(self):
        p = self.p
        out = fuse(self.he, self.hi, p, "concat").value
        expect = np.concatenate([self.he, self.hi], axis=1) @ p.W_cat.value + p.b_cat.value
        np.testing.assert_allclose(out, expect, atol=1e-14)

    def test_single_view(self):
        p = self.p
        np.testing.assert_allclose(fuse(self.he, None, p).value, mapped(self.he, p.W_er, p.b_er, p), atol=1e-14)
        np.testing.assert_allclose(fuse(None, self.hi, p).value, mapped(self.hi, p.W_ir, p.b_ir, p), atol=1e-14)

    def test_errors(self):
        with pytest.raises(UsageError):
            fuse(self.he, self.hi, self.p, "gate")
        with pytest.raises(UsageError):
            fuse(None, None, self.p)

    @pytest.mark.parametrize("mode,views", [("attention", ("er", "ir")), ("add", ("er", "ir")),
                                            ("concat", ("er", "ir")), ("attention", ("er",)),
                                            ("attention", ("ir",))])
    def test_used_params_are_exactly_the_touched_ones(self, mode, views):
        p = self.p
        he = self.he if "er" in views else None
        hi = self.hi if "ir" in views else None
        allp = [t for _, t in p.named("f")]
        with T.Tape() as tape:
            loss = T.sum_(T.square(fuse(he, hi, p, mode)))
        grads = tape.backward(loss, allp)
        used = {id(t) for t in fusion_used(p, mode, views)}
        for t, gr in zip(allp, grads):
            if id(t) not in used:
                assert np.linalg.norm(gr) <= 1e-12


class TestPredict:
    def test_examples(self):
        assert predict_score([1.0, 0.0], [0.0, 3.0]).item() == 0.0
        u = np.array([0.6, 0.8])
        assert predict_score(u, u).item() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_array_equal(predict_score(np.ones((2, 2)), np.eye(2)).value, [1.0, 1.0])

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            predict_score(np.ones(3), np.ones(2))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 100))
    def test_ranking_invariant_to_positive_scaling(self, seed, c):
        g = np.random.default_rng(seed)
        u, items = g.standard_normal(5), g.standard_normal((20, 5))
        s = predict_score(np.tile(u, (20, 1)), items).value
        s2 = predict_score(np.tile(c * u, (20, 1)), items).value
        np.testing.assert_array_equal(np.argsort(-s, kind="stable"), np.argsort(-s2, kind="stable"))
