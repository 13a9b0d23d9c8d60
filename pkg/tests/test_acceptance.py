"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed as they happen
(visible with ``-s``) and again in the terminal summary.
"""
import time
from functools import lru_cache

import numpy as np

from kcrec import tensor as T
from kcrec.cli import main
from kcrec.config import RunConfig
from kcrec.explicit import ExplicitStructure, explicit_forward, init_explicit
from kcrec.fusion import dual_head_fuse, fusion_used, init_fusion
from kcrec.hin import InteractionSplit, SynthConfig, random_features, split_interactions, synth_hin
from kcrec.implicit import init_implicit, multichannel_forward, stack_hops
from kcrec.model import KCRec
from kcrec.proto import build_prototypical_graph, gat_encode, infonce_per_anchor, init_gat
from kcrec.train import evaluate, hit_ratio, mrr, ndcg, run_once

from conftest import toy_hin
from test_implicit import dense_chain

RESULTS = []


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def max_err(fn, params, max_coords=None, seed=0):
    return max(T.gradient_errors(fn, params, max_coords=max_coords, seed=seed))


# -- 1 ------------------------------------------------------------------------------

def gradient_cases(seed):
    hin = toy_hin(seed)
    assert 6 <= hin.n_nodes <= 10
    g = np.random.default_rng(seed)
    d = 8
    x = g.uniform(-1, 1, (hin.n_nodes, d))
    w = g.standard_normal((hin.n_nodes, d))
    basis, exp = init_explicit(g, 6, d, [d, d], 3)
    structure = ExplicitStructure(hin)
    imp = init_implicit(g, len(hin.adjacency), d, [d], 3, 2)
    imp.logits.value = g.standard_normal(imp.logits.shape)
    gat = init_gat(g, d)
    target = T.parameter(g.standard_normal(d))
    protos = g.standard_normal((4, d))
    wd = g.standard_normal(d)
    fus = init_fusion(g, d, d)
    for _, t in fus.named("f"):
        t.value = t.value + 0.1 * g.standard_normal(t.shape)
    he, hi = T.parameter(g.standard_normal((3, d))), T.parameter(g.standard_normal((3, d)))
    wf = g.standard_normal((3, d))

    cases = {
        "explicit": (lambda: T.sum_(explicit_forward(structure, x, basis, exp) * w),
                     [basis.bases, basis.coeffs] + [p for _, p in exp.named()]),
        "implicit": (lambda: T.sum_(multichannel_forward(hin, x, imp) * w), [p for _, p in imp.named()]),
        "gat": (lambda: T.sum_(gat_encode(build_prototypical_graph(target, protos), gat) * wd),
                [gat.weight, gat.attn]),
        "fusion": (lambda: T.sum_(dual_head_fuse(he, hi, fus) * wf),
                   fusion_used(fus, "attention", ("er", "ir")) + [he, hi]),
    }
    cfg = RunConfig(d0=d, d1=d, d_fused=d, bases=3, hops=3, protos_user=2, protos_concept=2, seed=seed)
    model = KCRec(hin, x, cfg)
    model.refresh_prototypes()
    users, pos, neg = np.array([0, 1, 2]), np.array([0, 1, 2]), np.array([1, 2, 0])
    cases["composite"] = (lambda: model.batch_loss(users, pos, neg), model.active_parameters())
    return cases


def test_criterion_1_gradient_integrity():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(5):
        for name, (fn, params) in gradient_cases(seed).items():
            # module cases perturb every entry; the composite perturbs up to 64 per tensor
            cap = 64 if name == "composite" else None
            worst[name] = max(worst.get(name, 0.0), max_err(fn, params, cap, seed))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and elapsed < 60
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    record(1, ok, f"max rel err {detail}; {elapsed:.1f}s")


# -- 2 ------------------------------------------------------------------------------

def test_criterion_2_implicit_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(10):
        g = np.random.default_rng(100 + i)
        users, concepts, courses = (int(g.integers(2, 8)), int(g.integers(2, 7)), int(g.integers(1, 6)))
        hin = toy_hin(100 + i, users, concepts, courses)
        assert hin.n_nodes <= 20
        for hops in (1, 2, 3):
            logits = g.standard_normal((hops, len(hin.adjacency)))
            diff = np.abs(stack_hops(hin, logits).to_dense() - dense_chain(hin.adjacency, logits)).max()
            worst = max(worst, diff)
    elapsed = time.perf_counter() - t0
    record(2, worst <= 1e-10 and elapsed < 10, f"max |diff| {worst:.1e} over 10 graphs x T=1..3; {elapsed:.2f}s")


# -- 3 ------------------------------------------------------------------------------

def test_criterion_3_contrastive_bounds():
    g = np.random.default_rng(3)
    violations, trials = 0, 0
    uniform_err = 0.0
    for B in (8, 64):
        for tau in (0.3, 0.5, 0.6):
            for _ in range(100):
                H, P, N = (g.standard_normal((B, 16)) for _ in range(3))
                unit = [m / np.linalg.norm(m, axis=1, keepdims=True) for m in (H, P, N)]
                per = infonce_per_anchor(*unit, tau).value
                lo, hi = np.log(B) - 2 / tau, np.log(B) + 2 / tau
                violations += int(np.sum((per < lo - 1e-12) | (per > hi + 1e-12)))
                trials += 1
            v = np.tile(g.standard_normal(16), (B, 1))
            uniform_err = max(uniform_err, np.abs(infonce_per_anchor(v, v, v, tau).value - np.log(B)).max())
    ok = violations == 0 and uniform_err <= 1e-9
    record(3, ok, f"{trials} batches, {violations} bound violations; uniform |loss - log B| {uniform_err:.1e}")


# -- 4 ------------------------------------------------------------------------------

def test_criterion_4_metric_identities():
    mismatches = 0
    for r in range(1, 101):
        for k in (5, 10, 20):
            mismatches += hit_ratio([r], k) != float(r <= k)
            mismatches += ndcg([r], k) != (1 / np.log2(r + 1) if r <= k else 0.0)
        mismatches += mrr([r]) != 1 / r
    g = np.random.default_rng(4)
    n = 2000
    split = InteractionSplit(n, 200, np.column_stack([np.arange(n), g.integers(0, 100, n)]),
                             np.column_stack([np.arange(n), 100 + g.integers(0, 100, n)]))
    ordered = True
    hr = {}
    for s in range(5):
        rep = evaluate(g.random((n, 200)), split, seed=s)
        ordered &= rep.hr[5] <= rep.hr[10] <= rep.hr[20]
        if s == 0:
            hr = rep.hr
    close = all(abs(hr[k] - k / 100) <= 0.03 for k in (5, 10, 20))
    ok = mismatches == 0 and ordered and close
    record(4, ok, f"closed-form mismatches {mismatches}; random scorer HR@5/10/20 = "
                  f"{hr[5]:.3f}/{hr[10]:.3f}/{hr[20]:.3f} over {n} cases")


# -- 5, 6 ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def planted(seed):
    hin = synth_hin(SynthConfig(groups=5, users_per_group=40, concepts_per_group=20,
                                p_in=0.3, p_out=0.01, seed=seed))
    return hin, split_interactions(hin, "leave-one-out", seed=seed)


@lru_cache(maxsize=None)
def planted_hr10(variant, seed):
    hin, split = planted(seed)
    cfg = RunConfig(seed=seed).with_variant(variant)
    t0 = time.perf_counter()
    _, rep = run_once(hin, random_features(hin, cfg.d0, seed), split, cfg)
    return rep.hr[10], time.perf_counter() - t0


def test_criterion_5_planted_structure():
    hin, _ = planted(0)
    assert hin.counts["user"] == 200 and hin.counts["concept"] == 100
    runs = [planted_hr10("full", s) for s in range(3)]
    mean = float(np.mean([h for h, _ in runs]))
    total = sum(t for _, t in runs)
    record(5, mean >= 0.50 and total < 300,
           f"mean HR@10 {mean:.3f} (seeds {', '.join(f'{h:.3f}' for h, _ in runs)}; random 0.10); {total:.0f}s")


def test_criterion_6_ablation_ordering():
    means = {v: float(np.mean([planted_hr10(v, s)[0] for s in range(5)]))
             for v in ("full", "w/-er", "w/-ir", "w/o-cl")}
    ok = all(means["full"] >= means[v] - 0.02 for v in ("w/-er", "w/-ir", "w/o-cl"))
    record(6, ok, "mean HR@10 over 5 seeds: " + " ".join(f"{k}={v:.3f}" for k, v in means.items()))


# -- 7 ------------------------------------------------------------------------------

def test_criterion_7_determinism(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    assert main(["synth", "--out", str(data), "--seed", "0"]) == 0
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        out.mkdir()
        assert main(["train", "--data", str(data), "--out", str(out), "--seed", "0"]) == 0
        assert main(["evaluate", "--checkpoint", str(out / "checkpoint.bin"), "--data", str(data),
                     "--out", str(out / "report.txt")]) == 0
        outputs.append({f: (out / f).read_bytes() for f in ("loss_trace.txt", "checkpoint.bin", "report.txt")})
    same = {f: outputs[0][f] == outputs[1][f] for f in outputs[0]}
    record(7, all(same.values()), " ".join(f"{f}={'identical' if s else 'DIFFERS'}" for f, s in same.items()))


# -- 8 ------------------------------------------------------------------------------

def test_criterion_8_fusion_contracts():
    g = np.random.default_rng(8)
    worst = 0.0
    for i in range(1000):
        if i % 100 == 0:
            p = init_fusion(g, 6, 4)
            p.b_s.value = g.standard_normal(1)
        _, w = dual_head_fuse(g.standard_normal(6) * 3, g.standard_normal(6) * 3, p, return_weights=True)
        worst = max(worst, abs(w.sum() - 1))
    p = init_fusion(g, 6, 4)
    p.W_ir, p.b_ir = p.W_er, p.b_er
    h = g.standard_normal(6)
    _, w = dual_head_fuse(h, h, p, return_weights=True)
    sym = np.abs(w - 0.5).max()
    record(8, worst <= 1e-12 and sym <= 1e-12,
           f"max |sum - 1| {worst:.1e} over 1000 inputs; symmetric weights {w[0, 0]:.3f}/{w[0, 1]:.3f}")
