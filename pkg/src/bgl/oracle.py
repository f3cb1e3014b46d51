"""Slow, transparent reference computations for checking :mod:`bgl.loss`.

Nothing here shares code with the fast path: the joint distribution is
enumerated state by state through the dense association matrices, and
gradients are estimated by central differences.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InstanceTooLarge, NonFiniteLoss

__all__ = [
    "JointTable",
    "MAX_STATES",
    "enumerate_joint",
    "oracle_nll",
    "fd_gradient",
    "softmax_reference",
]

MAX_STATES = 10**7


@dataclass
class JointTable:
    states: np.ndarray  # (n_supported, 1 + m): fine index then one coarse index per type
    weights: np.ndarray  # unnormalised score of each supported state
    z: float
    p: np.ndarray
    p_coarse: list

    @property
    def n_supported(self) -> int:
        return len(self.states)


def enumerate_joint(graph, scores) -> JointTable:
    """Sum the joint distribution over every (i, c_1, ..., c_m) combination.

    Each combination is weighted by ``exp(f_i) * prod_j g^j[i, c_j] exp(f^j[c_j])``;
    combinations with a zero mask are dropped.
    """
    k, sizes = graph.k, graph.coarse_sizes
    n_states = k * math.prod(sizes)
    if n_states > MAX_STATES:
        raise InstanceTooLarge(f"{n_states} joint states exceed the limit of {MAX_STATES}")
    f = np.asarray(scores.f, dtype=np.float64)
    fc = [np.asarray(c, dtype=np.float64) for c in scores.f_coarse]
    G = [graph.association(j) for j in range(graph.m)]

    states, weights = [], []
    for i in range(k):
        for combo in itertools.product(*[range(s) for s in sizes]):
            mask = 1.0
            w = math.exp(f[i])
            for j, c in enumerate(combo):
                mask *= G[j][i, c]
                w *= math.exp(fc[j][c])
            if mask:
                states.append((i,) + combo)
                weights.append(w * mask)

    states = np.array(states, dtype=np.int64).reshape(-1, 1 + graph.m)
    weights = np.array(weights)
    z = math.fsum(weights)
    p = np.zeros(k)
    p_coarse = [np.zeros(s) for s in sizes]
    for state, w in zip(states, weights):
        p[state[0]] += w / z
        for j, c in enumerate(state[1:]):
            p_coarse[j][c] += w / z
    return JointTable(states, weights, z, p, p_coarse)


def oracle_nll(graph, scores, y, coarse_weights=None) -> float:
    """Negative joint log-likelihood of label ``y`` from the enumerated table."""
    table = enumerate_joint(graph, scores)
    w = np.ones(graph.m) if coarse_weights is None else np.asarray(coarse_weights, float)
    value = -math.log(table.p[y])
    for j in range(graph.m):
        value -= w[j] * math.log(table.p_coarse[j][graph.parent[y, j]])
    return value


def fd_gradient(loss_fn, point, step=1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``loss_fn`` at ``point``."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for n in range(flat.size):
        orig = flat[n]
        flat[n] = orig + step
        hi = loss_fn(x)
        flat[n] = orig - step
        lo = loss_fn(x)
        flat[n] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NonFiniteLoss(f"loss is not finite near coordinate {n}")
        gflat[n] = (hi - lo) / (2 * step)
    return grad


def softmax_reference(f):
    """Plain softmax, written out with scalar math: ``(log_z, p)``."""
    f = [float(v) for v in f]
    top = max(f)
    terms = [math.exp(v - top) for v in f]
    s = math.fsum(terms)
    return top + math.log(s), np.array([t / s for t in terms])
