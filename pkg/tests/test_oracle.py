import math

import numpy as np
import pytest

from bgl.errors import InstanceTooLarge, NonFiniteLoss
from bgl.graph import LabelGraph
from bgl.loss import ScoreSet
from bgl.oracle import MAX_STATES, enumerate_joint, fd_gradient, oracle_nll, softmax_reference


def test_hand_example_z_and_marginals(toy_graph):
    table = enumerate_joint(toy_graph, ScoreSet([0.0, 0.0, 0.0], [[math.log(2), 0.0]]))
    assert table.z == pytest.approx(5.0, rel=1e-14)
    np.testing.assert_allclose(table.p, [0.4, 0.4, 0.2], rtol=1e-14)
    np.testing.assert_allclose(table.p_coarse[0], [0.8, 0.2], rtol=1e-14)
    assert table.n_supported == 3


def test_no_coarse_types_sums_exponentials():
    f = [0.3, -1.2, 2.0, 0.0]
    table = enumerate_joint(LabelGraph(4), ScoreSet(f))
    assert table.n_supported == 4
    assert table.z == pytest.approx(sum(math.exp(v) for v in f), rel=1e-14)


def test_supported_states_equal_k(rng):
    for _ in range(50):
        k = int(rng.integers(1, 7))
        sizes = [int(rng.integers(1, 4)) for _ in range(int(rng.integers(1, 4)))]
        g = LabelGraph(k, sizes, np.stack([rng.integers(0, s, k) for s in sizes], axis=1))
        scores = ScoreSet(rng.normal(size=k), [rng.normal(size=s) for s in sizes])
        table = enumerate_joint(g, scores)
        assert table.n_supported == k
        # each surviving state follows the parent table
        np.testing.assert_array_equal(table.states[:, 1:], g.parent[table.states[:, 0]])


def test_size_guard():
    g = LabelGraph(10, [1000, 1001], np.zeros((10, 2), dtype=int))
    assert 10 * 1000 * 1001 > MAX_STATES
    with pytest.raises(InstanceTooLarge):
        enumerate_joint(g, ScoreSet(np.zeros(10), [np.zeros(1000), np.zeros(1001)]))


def test_oracle_nll_uniform(toy_graph):
    val = oracle_nll(toy_graph, ScoreSet(np.zeros(3), [np.zeros(2)]), 0)
    assert val == pytest.approx(-math.log(1 / 3) - math.log(2 / 3), rel=1e-14)


def test_fd_quadratic():
    g = fd_gradient(lambda x: float(x[0] ** 2), np.array([3.0]), 1e-5)
    assert abs(g[0] - 6.0) < 1e-9


def test_fd_leaves_point_untouched():
    x = np.array([1.0, -2.0, 0.5])
    fd_gradient(lambda v: float(np.sum(v ** 3)), x)
    np.testing.assert_array_equal(x, [1.0, -2.0, 0.5])


def test_fd_rejects_nonfinite_and_bad_step():
    with pytest.raises(NonFiniteLoss):
        fd_gradient(lambda x: math.log(x[0]) if x[0] > 0 else float("nan"), np.array([0.0]))
    with pytest.raises(ValueError):
        fd_gradient(lambda x: 0.0, np.zeros(1), step=0.0)


def test_softmax_reference():
    z, p = softmax_reference([0.0, math.log(3.0)])
    assert z == pytest.approx(math.log(4.0), rel=1e-15)
    np.testing.assert_allclose(p, [0.25, 0.75], rtol=1e-15)
