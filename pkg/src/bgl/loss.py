"""Forward and backward passes of the bipartite-graph-label softmax layer.

Given fine scores ``f`` (length k) and, for every coarse type ``j``, coarse
scores ``f_coarse[j]`` (length k_j), the joint model assigns fine class ``i``
the unnormalised log-score

    log_h[i] = f[i] + sum_j f_coarse[j][parent[i, j]]

so the partition function is a single logsumexp over ``k`` terms and every
coarse marginal is a group sum of fine marginals.

All gradients returned here are gradients of the *minimised* quantities
(negative log-likelihood, negative log-prior).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import LabelOutOfRange, NonFiniteScore, ShapeMismatch
from .graph import LabelGraph

__all__ = [
    "ScoreSet",
    "Posterior",
    "ScoreGradient",
    "LossConfig",
    "forward",
    "nll",
    "backward_naive",
    "backward_fast",
    "cross_type_naive",
    "cross_type_fast",
    "target_group_ratios",
    "prior_penalty",
    "prior_gradient",
    "softmax_forward",
    "softmax_nll",
    "softmax_backward",
    "forward_batch",
    "loss_and_grad_batch",
]

DEFAULT_LAMBDA = 1e-4


@dataclass(frozen=True)
class ScoreSet:
    f: np.ndarray
    f_coarse: Sequence = ()

    @cached_property
    def coarse_flat(self) -> np.ndarray:
        if len(self.f_coarse) == 0:
            return np.zeros(0)
        return np.concatenate([np.asarray(c, dtype=np.float64).ravel() for c in self.f_coarse])

    @classmethod
    def from_flat(cls, graph: LabelGraph, f, coarse_flat) -> "ScoreSet":
        coarse_flat = np.asarray(coarse_flat, dtype=np.float64)
        parts = np.split(coarse_flat, graph.offsets[1:-1]) if graph.m else []
        return cls(np.asarray(f, dtype=np.float64), parts)


@dataclass
class Posterior:
    """Result of :func:`forward`.

    ``p_coarse_flat`` holds every type's coarse marginals back to back;
    ``p_coarse[j]`` are views into it.
    """

    log_z: float
    p: np.ndarray
    p_coarse_flat: np.ndarray
    log_h: np.ndarray
    offsets: np.ndarray = field(default=None, repr=False)

    @cached_property
    def p_coarse(self) -> list:
        if self.offsets is None or len(self.offsets) < 2:
            return []
        return np.split(self.p_coarse_flat, self.offsets[1:-1])


@dataclass(frozen=True)
class ScoreGradient:
    df: np.ndarray
    df_coarse_flat: np.ndarray
    df_coarse: list = field(default_factory=list)


@dataclass(frozen=True)
class LossConfig:
    """Prior strength ``lam`` and per-type weights of the coarse NLL terms.

    ``coarse_term_weights=None`` means weight 1.0 for every type.
    """

    lam: float = DEFAULT_LAMBDA
    coarse_term_weights: Optional[tuple] = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.coarse_term_weights is not None:
            w = tuple(float(v) for v in self.coarse_term_weights)
            if any(not v >= 0 for v in w):
                raise ValueError(f"coarse term weights must be >= 0, got {w}")
            object.__setattr__(self, "coarse_term_weights", w)

    def weights(self, m: int) -> np.ndarray:
        if self.coarse_term_weights is None:
            return np.ones(m)
        if len(self.coarse_term_weights) != m:
            raise ShapeMismatch(
                f"{len(self.coarse_term_weights)} coarse term weights for m={m} types"
            )
        return np.asarray(self.coarse_term_weights, dtype=np.float64)


def _split(graph, flat):
    return np.split(flat, graph.offsets[1:-1]) if graph.m else []


def _checked_scores(graph, scores):
    f = np.asarray(scores.f, dtype=np.float64)
    if f.shape != (graph.k,):
        raise ShapeMismatch(f"fine scores have shape {f.shape}, expected ({graph.k},)")
    if len(scores.f_coarse) != graph.m:
        raise ShapeMismatch(f"{len(scores.f_coarse)} coarse score vectors for m={graph.m}")
    for j, (c, s) in enumerate(zip(scores.f_coarse, graph.coarse_sizes)):
        if np.shape(c) != (s,):
            raise ShapeMismatch(f"coarse scores of type {j} have shape {np.shape(c)}, expected ({s},)")
    return f, scores.coarse_flat


def forward(graph: LabelGraph, scores: ScoreSet) -> Posterior:
    """Exact posterior over fine and coarse labels in O(k m)."""
    f, fc = _checked_scores(graph, scores)
    if graph.m:
        log_h = f + fc[graph.flat_parent_t].sum(axis=0)
    else:
        log_h = f.copy()
    # any inf/nan among the inputs propagates into log_h
    if not np.isfinite(log_h).all():
        raise NonFiniteScore("scores must be finite")
    mx = log_h.max()
    p = np.exp(log_h - mx)
    s = p.sum()
    p /= s
    log_z = float(mx) + math.log(s)
    if graph.m:
        pc = np.bincount(graph.flat_parent_t_ravel, np.concatenate((p,) * graph.m), graph.total_coarse)
    else:
        pc = np.zeros(0)
    return Posterior(log_z, p, pc, log_h, graph.offsets)


def _check_label(graph, y):
    if not 0 <= y < graph.k:
        raise LabelOutOfRange(f"label {y} outside 0..{graph.k - 1}")


def target_group_ratios(graph: LabelGraph, post: Posterior, y: int):
    """Within-group softmax of ``log_h`` over the coarse groups containing ``y``.

    Returns ``(r, log_group)`` where ``r[i, j] = p_i / p^j_{parent[y, j]}`` for
    fine classes sharing ``y``'s parent in type ``j`` and 0 otherwise, and
    ``log_group[j] = log(z * p^j_{parent[y, j]})``.  Computed in the log
    domain so tiny coarse marginals never appear as denominators.
    """
    same = graph.parent == graph.parent[y]
    masked = np.where(same, post.log_h[:, None], -np.inf)
    # y belongs to each of its own groups, so the column max is log_h[y]-finite
    mx = masked.max(axis=0)
    e = np.exp(masked - mx)
    s = e.sum(axis=0)
    return e / s, mx + np.log(s)


def nll(graph: LabelGraph, scores: ScoreSet, y: int, cfg: Optional[LossConfig] = None,
        posterior: Optional[Posterior] = None) -> float:
    """Data term ``-log p_y - sum_j w_j log p^j_{parent[y, j]}``.

    The prior lives in :func:`prior_penalty`.  Returns ``inf`` (with a
    ``RuntimeWarning``) if a target marginal underflows to zero.
    """
    _check_label(graph, y)
    cfg = cfg or LossConfig()
    post = posterior if posterior is not None else forward(graph, scores)
    value = post.log_z - post.log_h[y]
    if graph.m:
        _, log_group = target_group_ratios(graph, post, y)
        value -= float(cfg.weights(graph.m) @ (log_group - post.log_z))
    if not np.isfinite(value):
        warnings.warn(f"target marginal underflowed for label {y}; nll is +inf", RuntimeWarning)
        return float("inf")
    return float(value)


def _direct_terms(graph, post, y, w):
    """Terms (a)-(d) of the log-likelihood gradient, plus the ratios ``r``."""
    df = -post.p
    df[y] += 1.0
    if not graph.m:
        return df, np.zeros(0), None
    r, _ = target_group_ratios(graph, post, y)
    df += r @ w - w.sum() * post.p
    onehot = np.zeros(graph.total_coarse)
    onehot[graph.flat_parent[y]] = 1.0
    w_flat = np.repeat(1.0 + w, graph.coarse_sizes)
    dfc = w_flat * (onehot - post.p_coarse_flat)
    return df, dfc, r


def cross_type_naive(graph: LabelGraph, post: Posterior, y: int, weights=None, r=None) -> np.ndarray:
    """Aggregated cross-type gradient by direct evaluation over all type pairs.

    Entry ``(l, c)`` of the result (flattened over coarse classes) is
    ``sum_{j != l} w_j * (sum_i g^j_{i,phi_y^j} g^l_{i,c} p_i / p^j_{phi_y^j} - p^l_c)``.
    Cost is O(k * m * sum_j k_j).
    """
    m = graph.m
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    if r is None:
        r, _ = target_group_ratios(graph, post, y)
    out = np.zeros(graph.total_coarse)
    G = [graph.association(j) for j in range(m)]
    for j in range(m):
        active = G[j][:, graph.parent[y, j]] * r[:, j]
        for l in range(m):
            if l == j:
                continue
            lo, hi = graph.offsets[l], graph.offsets[l + 1]
            out[lo:hi] += w[j] * ((G[l] * active[:, None]).sum(axis=0) - post.p_coarse[l])
    return out


def cross_type_fast(graph: LabelGraph, post: Posterior, y: int, weights=None, r=None) -> np.ndarray:
    """Same quantity as :func:`cross_type_naive` via per-class accumulators.

    ``q_i = sum_j w_j r[i, j]`` is formed once in O(k m); each coarse class
    then collects ``q_i - w_l r[i, l]`` from its members, so the whole pass
    costs O(k m + sum_j k_j).
    """
    m = graph.m
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    if r is None:
        r, _ = target_group_ratios(graph, post, y)
    q = r @ w
    contrib = q[:, None] - r * w
    acc = np.bincount(graph.flat_parent_ravel, weights=contrib.ravel(), minlength=graph.total_coarse)
    others = np.repeat(w.sum() - w, graph.coarse_sizes)
    return acc - others * post.p_coarse_flat


def _backward(graph, post, y, cfg, cross):
    _check_label(graph, y)
    cfg = cfg or LossConfig()
    w = cfg.weights(graph.m)
    df, dfc, r = _direct_terms(graph, post, y, w)
    if graph.m > 1:
        dfc = dfc + cross(graph, post, y, w, r)
    df, dfc = -df, -dfc
    return ScoreGradient(df, dfc, _split(graph, dfc))


def backward_naive(graph: LabelGraph, post: Posterior, y: int,
                   cfg: Optional[LossConfig] = None) -> ScoreGradient:
    """Gradient of :func:`nll` w.r.t. all scores, cross-type terms evaluated directly."""
    return _backward(graph, post, y, cfg, cross_type_naive)


def backward_fast(graph: LabelGraph, post: Posterior, y: int,
                  cfg: Optional[LossConfig] = None) -> ScoreGradient:
    """Gradient of :func:`nll` w.r.t. all scores using the linear-time aggregation."""
    return _backward(graph, post, y, cfg, cross_type_fast)


def _check_params(graph, W, W_coarse):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != graph.k:
        raise ShapeMismatch(f"W has shape {W.shape}, expected (d, {graph.k})")
    if len(W_coarse) != graph.m:
        raise ShapeMismatch(f"{len(W_coarse)} coarse weight matrices for m={graph.m}")
    out = []
    for j, Wj in enumerate(W_coarse):
        Wj = np.asarray(Wj, dtype=np.float64)
        if Wj.shape != (W.shape[0], graph.coarse_sizes[j]):
            raise ShapeMismatch(
                f"W_coarse[{j}] has shape {Wj.shape}, expected ({W.shape[0]}, {graph.coarse_sizes[j]})"
            )
        out.append(Wj)
    return W, out


def prior_penalty(graph: LabelGraph, W, W_coarse, lam: float) -> float:
    """``lam/2 * sum_i sum_j ||w_i - w^j_{parent[i, j]}||^2`` over weight columns."""
    W, W_coarse = _check_params(graph, W, W_coarse)
    if lam == 0:
        return 0.0
    total = 0.0
    for j, Wj in enumerate(W_coarse):
        diff = W - Wj[:, graph.parent[:, j]]
        total += float(np.sum(diff * diff))
    return 0.5 * lam * total


def prior_gradient(graph: LabelGraph, W, W_coarse, lam: float):
    """Gradient of :func:`prior_penalty`; returns ``(dW, [dW_j, ...])``."""
    W, W_coarse = _check_params(graph, W, W_coarse)
    dW = np.zeros_like(W)
    dWc = [np.zeros_like(Wj) for Wj in W_coarse]
    if lam == 0:
        return dW, dWc
    for j, Wj in enumerate(W_coarse):
        diff = W - Wj[:, graph.parent[:, j]]
        dW += lam * diff
        np.add.at(dWc[j].T, graph.parent[:, j], -lam * diff.T)
    return dW, dWc


# plain softmax baseline (the m = 0 model)

def softmax_forward(f):
    """Return ``(log_z, p)`` for a plain softmax over ``f``."""
    f = np.asarray(f, dtype=np.float64)
    if not np.isfinite(f).all():
        raise NonFiniteScore("scores must be finite")
    mx = f.max()
    p = np.exp(f - mx)
    s = p.sum()
    p /= s
    return float(mx) + math.log(s), p


def softmax_nll(f, y: int) -> float:
    log_z, _ = softmax_forward(f)
    return float(log_z - f[y])


def softmax_backward(p, y: int) -> np.ndarray:
    g = np.array(p, dtype=np.float64)
    g[y] -= 1.0
    return g


# batched versions used by the trainer

def forward_batch(graph: LabelGraph, F: np.ndarray, FC: np.ndarray):
    """Row-wise :func:`forward`; returns ``(log_z, P, PC, log_h)``."""
    if graph.m:
        log_h = F + FC[:, graph.flat_parent].sum(axis=2)
    else:
        log_h = np.array(F, dtype=np.float64)
    mx = log_h.max(axis=1, keepdims=True)
    e = np.exp(log_h - mx)
    s = e.sum(axis=1, keepdims=True)
    P = e / s
    log_z = (mx + np.log(s))[:, 0]
    B = F.shape[0]
    K = graph.total_coarse
    if graph.m:
        idx = (graph.flat_parent_ravel[None, :] + K * np.arange(B)[:, None]).ravel()
        PC = np.bincount(idx, weights=np.repeat(P, graph.m, axis=1).ravel(), minlength=B * K)
        PC = PC.reshape(B, K)
    else:
        PC = np.zeros((B, 0))
    return log_z, P, PC, log_h


def loss_and_grad_batch(graph: LabelGraph, F, FC, Y, cfg: Optional[LossConfig] = None):
    """Per-sample data-term losses and score gradients for a batch.

    Uses the linear-time cross-type aggregation.  Returns
    ``(losses, DF, DFC, P, PC)``; gradients are of the minimised loss.
    """
    cfg = cfg or LossConfig()
    F = np.asarray(F, dtype=np.float64)
    FC = np.asarray(FC, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    B, k = F.shape
    if k != graph.k or FC.shape != (B, graph.total_coarse) or Y.shape != (B,):
        raise ShapeMismatch(
            f"batch shapes F{F.shape} FC{FC.shape} Y{Y.shape} do not match graph {graph!r}"
        )
    if ((Y < 0) | (Y >= k)).any():
        raise LabelOutOfRange(f"labels outside 0..{k - 1}")
    log_z, P, PC, log_h = forward_batch(graph, F, FC)
    rows = np.arange(B)
    losses = log_z - log_h[rows, Y]
    DF = P.copy()
    DF[rows, Y] -= 1.0
    if not graph.m:
        return losses, DF, np.zeros((B, 0)), P, PC

    m, K = graph.m, graph.total_coarse
    w = cfg.weights(m)
    same = graph.parent[None, :, :] == graph.parent[Y][:, None, :]
    masked = np.where(same, log_h[:, :, None], -np.inf)
    mx = masked.max(axis=1, keepdims=True)
    e = np.exp(masked - mx)
    s = e.sum(axis=1, keepdims=True)
    r = e / s
    log_group = (mx + np.log(s))[:, 0, :]
    losses = losses - (log_group - log_z[:, None]) @ w

    DF -= r @ w - w.sum() * P

    onehot = np.zeros((B, K))
    onehot[rows[:, None], graph.flat_parent[Y]] = 1.0
    w_flat = np.repeat(1.0 + w, graph.coarse_sizes)
    DFC = -w_flat * (onehot - PC)
    if m > 1:
        q = r @ w
        contrib = q[:, :, None] - r * w
        idx = (graph.flat_parent_ravel[None, :] + K * rows[:, None]).ravel()
        acc = np.bincount(idx, weights=contrib.reshape(B, -1).ravel(), minlength=B * K).reshape(B, K)
        others = np.repeat(w.sum() - w, graph.coarse_sizes)
        DFC -= acc - others * PC
    return losses, DF, DFC, P, PC
