"""Finite-difference checks of every analytic gradient in the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import LabelGraph
from .loss import (
    LossConfig,
    ScoreSet,
    backward_fast,
    backward_naive,
    forward,
    nll,
    prior_gradient,
    prior_penalty,
)
from .model import init_model
from .oracle import fd_gradient

__all__ = ["CheckResult", "rel_error", "random_graph", "check_nll", "check_prior", "check_model", "run_checks"]


@dataclass
class CheckResult:
    name: str
    rel_error: float


def rel_error(analytic, numeric) -> float:
    """Max-norm error relative to the larger of the two gradients' max norms."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max(), 1e-8)
    return float(np.abs(a - n).max() / scale)


def random_graph(rng, k, m, kj) -> LabelGraph:
    sizes = [kj] * m if np.isscalar(kj) else list(kj)
    parent = np.stack([rng.integers(0, s, k) for s in sizes], axis=1) if m else None
    return LabelGraph(k, sizes, parent)


def check_nll(graph, rng, step=1e-5, sabotage=False, cfg=None):
    """Compare both backward passes with central differences of :func:`nll`."""
    cfg = cfg or LossConfig()
    scores = ScoreSet(rng.normal(0, 2, graph.k), [rng.normal(0, 2, s) for s in graph.coarse_sizes])
    y = int(rng.integers(graph.k))
    k = graph.k

    def loss(v):
        return nll(graph, ScoreSet.from_flat(graph, v[:k], v[k:]), y, cfg)

    num = fd_gradient(loss, np.concatenate([scores.f, scores.coarse_flat]), step)
    post = forward(graph, scores)
    out = []
    for name, fn in (("nll/naive", backward_naive), ("nll/fast", backward_fast)):
        g = fn(graph, post, y, cfg)
        ana = np.concatenate([g.df, g.df_coarse_flat])
        if sabotage:
            ana = ana.copy()
            ana[0] += 0.1
        out.append(CheckResult(name, rel_error(ana, num)))
    return out


def check_prior(graph, rng, d=3, lam=0.7, step=1e-5, sabotage=False):
    W = rng.normal(size=(d, graph.k))
    Wc = [rng.normal(size=(d, s)) for s in graph.coarse_sizes]
    blocks = [W] + Wc
    sizes = [b.size for b in blocks]

    def unpack(v):
        parts = np.split(v, np.cumsum(sizes)[:-1])
        return parts[0].reshape(W.shape), [p.reshape(b.shape) for p, b in zip(parts[1:], Wc)]

    def loss(v):
        a, b = unpack(v)
        return prior_penalty(graph, a, b, lam)

    point = np.concatenate([b.ravel() for b in blocks])
    num = fd_gradient(loss, point, step)
    dW, dWc = prior_gradient(graph, W, Wc, lam)
    ana = np.concatenate([dW.ravel()] + [g.ravel() for g in dWc])
    if sabotage:
        ana[0] += 0.1
    return [CheckResult("prior", rel_error(ana, num))]


def check_model(graph, rng, mode, input_dim=4, kind="hidden", step=1e-5, sabotage=False,
                batch=3, lam=0.3):
    """End-to-end check of :meth:`Model.backprop_batch` for one mode."""
    model = init_model(graph, mode, input_dim, kind=kind, feature_dim=input_dim if kind == "identity" else 3,
                       hidden_dim=5, loss_cfg=LossConfig(lam), seed=int(rng.integers(2**31)))
    X = rng.normal(size=(batch, input_dim))
    Y = rng.integers(graph.k, size=batch)
    _, grads = model.backprop_batch(X, Y)
    out = []
    for name, theta in model.parameters():
        def loss(v, theta=theta):
            saved = theta.copy()
            theta[...] = v
            try:
                return model.loss_batch(X, Y)
            finally:
                theta[...] = saved

        num = fd_gradient(loss, theta.copy(), step)
        ana = grads[name]
        if sabotage:
            ana = ana + 0.1
        out.append(CheckResult(f"model/{mode}/{name}", rel_error(ana, num)))
    return out


def run_checks(graph=None, *, k=5, m=2, kj=3, seed=0, instances=5, sabotage=False, step=1e-5):
    """All checks on ``graph`` (or random graphs); returns a list of results."""
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(instances):
        g = graph if graph is not None else random_graph(rng, k, m, kj)
        results += check_nll(g, rng, step, sabotage)
        results += check_prior(g, rng, step=step, sabotage=sabotage)
    g = graph if graph is not None else random_graph(rng, k, m, kj)
    for mode in ("sm", "bgl1", "bglm"):
        results += check_model(g, rng, mode, step=step, sabotage=sabotage)
    return results
