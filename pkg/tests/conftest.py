import numpy as np
import pytest

from kcrec.hin import EdgeType, Hin, Schema, SynthConfig, split_interactions, synth_hin

TOY_SCHEMA = Schema(
    ("user", "concept", "course"),
    (EdgeType("click", "user", "concept"),
     EdgeType("course_include", "course", "concept"),
     EdgeType("learn", "user", "course")),
)


def toy_hin(seed=0, users=3, concepts=3, courses=2):
    """Small random HIN (8 nodes by default) where every user clicked something."""
    g = np.random.default_rng(seed)
    clicks = [(u, int(g.integers(concepts))) for u in range(users)]
    clicks += [(int(g.integers(users)), int(g.integers(concepts))) for _ in range(3)]
    include = [(c, k) for c in range(courses) for k in range(concepts) if g.random() < 0.5] or [(0, 0)]
    learn = [(u, int(g.integers(courses))) for u in range(users)]
    edges = {
        "click": (np.array([a for a, _ in clicks]), np.array([b for _, b in clicks])),
        "course_include": (np.array([a for a, _ in include]), np.array([b for _, b in include])),
        "learn": (np.array([a for a, _ in learn]), np.array([b for _, b in learn])),
    }
    return Hin(TOY_SCHEMA, {"user": users, "concept": concepts, "course": courses}, edges)


@pytest.fixture
def toy():
    return toy_hin(0)


@pytest.fixture(scope="session")
def small_synth():
    """A compact planted dataset for fast end-to-end checks."""
    cfg = SynthConfig(groups=2, users_per_group=10, concepts_per_group=8, courses_per_group=2,
                      videos_per_group=3, teachers=2, p_in=0.5, p_out=0.02, seed=3)
    hin = synth_hin(cfg)
    return cfg, hin, split_interactions(hin, "leave-one-out", seed=3)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
