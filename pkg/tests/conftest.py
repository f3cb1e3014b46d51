import numpy as np
import pytest

from bgl.graph import LabelGraph
from bgl.loss import ScoreSet


def random_instance(rng, max_k=8, max_m=4, max_kj=4, scale=2.0, min_m=0):
    """Random graph, N(0, scale^2) scores and a label.

    Coarse sizes are drawn independently of k, so some coarse classes end up
    with no members.
    """
    k = int(rng.integers(1, max_k + 1))
    m = int(rng.integers(min_m, max_m + 1))
    sizes = [int(rng.integers(1, max_kj + 1)) for _ in range(m)]
    parent = np.stack([rng.integers(0, s, k) for s in sizes], axis=1) if m else None
    g = LabelGraph(k, sizes, parent)
    scores = ScoreSet(rng.normal(0, scale, k), [rng.normal(0, scale, s) for s in sizes])
    return g, scores, int(rng.integers(k))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_graph():
    # three fine classes, one type: {1, 2} -> coarse 1, {3} -> coarse 2 (1-based)
    return LabelGraph(3, [2], [[0], [0], [1]])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
