"""Output-layer configurations and their parameters.

Three modes are supported:

``sm``
    plain softmax over the fine classes.
``bgl1``
    one feature extractor feeds the fine head ``W`` and every coarse head.
``bglm``
    two extractors, one for the fine head and one shared by all coarse heads.

Feature extractors are small stand-ins for a network trunk: identity,
affine, or affine -> max(0, .) -> affine.
"""
from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParseError, ShapeMismatch
from .graph import LabelGraph
from .loss import (
    LossConfig,
    ScoreSet,
    forward_batch,
    loss_and_grad_batch,
    prior_gradient,
    prior_penalty,
)

__all__ = [
    "MODES",
    "FeatureExtractor",
    "Model",
    "init_model",
    "save_model",
    "load_model",
    "read_model",
    "write_model",
]

log = logging.getLogger(__name__)

MODES = ("sm", "bgl1", "bglm")
KINDS = ("identity", "affine", "hidden")

MAGIC = b"BGLM"
FORMAT_VERSION = 1


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class FeatureExtractor:
    kind: str
    in_dim: int
    out_dim: int
    hidden_dim: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown extractor kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "identity" and self.in_dim != self.out_dim:
            raise ShapeMismatch(f"identity extractor needs in_dim == out_dim, got {self.in_dim}, {self.out_dim}")
        if self.kind == "hidden" and self.hidden_dim < 1:
            raise ValueError("hidden extractor needs hidden_dim >= 1")

    @classmethod
    def create(cls, kind, in_dim, out_dim, hidden_dim=0, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        ext = cls(kind, in_dim, out_dim, hidden_dim if kind == "hidden" else 0)
        if kind == "affine":
            ext.params = {
                "A": _glorot(rng, in_dim, out_dim, (out_dim, in_dim)),
                "b": np.zeros(out_dim),
            }
        elif kind == "hidden":
            ext.params = {
                "A1": _glorot(rng, in_dim, hidden_dim, (hidden_dim, in_dim)),
                "b1": np.zeros(hidden_dim),
                "A2": _glorot(rng, hidden_dim, out_dim, (out_dim, hidden_dim)),
                "b2": np.zeros(out_dim),
            }
        return ext

    def param_shapes(self):
        if self.kind == "affine":
            return [("A", (self.out_dim, self.in_dim)), ("b", (self.out_dim,))]
        if self.kind == "hidden":
            h = self.hidden_dim
            return [("A1", (h, self.in_dim)), ("b1", (h,)),
                    ("A2", (self.out_dim, h)), ("b2", (self.out_dim,))]
        return []

    def apply(self, X):
        """Map a batch ``X`` of shape (B, in_dim); returns ``(features, cache)``."""
        if self.kind == "identity":
            return X, None
        p = self.params
        if self.kind == "affine":
            return X @ p["A"].T + p["b"], X
        pre = X @ p["A1"].T + p["b1"]
        hid = np.maximum(pre, 0.0)
        return hid @ p["A2"].T + p["b2"], (X, pre, hid)

    def grads(self, cache, d_out):
        """Parameter gradients given the gradient w.r.t. the output features."""
        if self.kind == "identity":
            return {}
        p = self.params
        if self.kind == "affine":
            X = cache
            return {"A": d_out.T @ X, "b": d_out.sum(axis=0)}
        X, pre, hid = cache
        d_hid = (d_out @ p["A2"]) * (pre > 0)
        return {
            "A1": d_hid.T @ X,
            "b1": d_hid.sum(axis=0),
            "A2": d_out.T @ hid,
            "b2": d_out.sum(axis=0),
        }


@dataclass
class Model:
    """Linear heads on top of one or two feature extractors.

    ``W`` has shape (d, k); ``W_coarse[j]`` has shape (d_c, k_j) where ``d_c``
    is the output dimension of the extractor feeding the coarse heads.
    """

    mode: str
    graph: LabelGraph
    fine_extractor: FeatureExtractor
    W: np.ndarray
    W_coarse: list = field(default_factory=list)
    coarse_extractor: Optional[FeatureExtractor] = None
    loss_cfg: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        g = self.graph
        d = self.fine_extractor.out_dim
        if self.W.shape != (d, g.k):
            raise ShapeMismatch(f"W has shape {self.W.shape}, expected ({d}, {g.k})")
        if self.mode == "sm":
            if self.W_coarse or self.coarse_extractor is not None:
                raise ShapeMismatch("sm mode takes no coarse heads")
            self.loss_graph = LabelGraph(g.k)
        else:
            if self.mode == "bgl1" and self.coarse_extractor is not None:
                raise ShapeMismatch("bgl1 shares one extractor; coarse_extractor must be None")
            if self.mode == "bglm" and self.coarse_extractor is None:
                raise ShapeMismatch("bglm needs a coarse_extractor")
            if self.mode == "bglm" and self.coarse_extractor.in_dim != self.fine_extractor.in_dim:
                raise ShapeMismatch("both extractors must read the same input")
            dc = self.coarse_dim
            if len(self.W_coarse) != g.m or any(
                Wj.shape != (dc, s) for Wj, s in zip(self.W_coarse, g.coarse_sizes)
            ):
                raise ShapeMismatch(
                    f"coarse heads {[Wj.shape for Wj in self.W_coarse]} do not match "
                    f"d_c={dc} and coarse sizes {list(g.coarse_sizes)}"
                )
            self.loss_graph = g
        self._prior_on = self.mode != "sm" and self.loss_cfg.lam > 0
        if self._prior_on and self.coarse_dim != self.fine_dim:
            log.warning(
                "hierarchical prior disabled: fine features have dim %d, coarse features dim %d",
                self.fine_dim, self.coarse_dim,
            )
            self._prior_on = False

    @property
    def input_dim(self) -> int:
        return self.fine_extractor.in_dim

    @property
    def fine_dim(self) -> int:
        return self.fine_extractor.out_dim

    @property
    def coarse_dim(self) -> int:
        ext = self.coarse_extractor or self.fine_extractor
        return ext.out_dim

    @property
    def prior_active(self) -> bool:
        return self._prior_on

    def extractors(self):
        out = [self.fine_extractor]
        if self.coarse_extractor is not None:
            out.append(self.coarse_extractor)
        return out

    def parameters(self):
        """``(name, array)`` pairs in declaration order; arrays are live references."""
        out = [(f"fine.{n}", self.fine_extractor.params[n]) for n, _ in self.fine_extractor.param_shapes()]
        if self.coarse_extractor is not None:
            out += [(f"coarse.{n}", self.coarse_extractor.params[n])
                    for n, _ in self.coarse_extractor.param_shapes()]
        out.append(("W", self.W))
        out += [(f"W_coarse.{j}", Wj) for j, Wj in enumerate(self.W_coarse)]
        return out

    def _check_input(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeMismatch(f"input batch has shape {X.shape}, expected (B, {self.input_dim})")
        return X

    def _scores(self, X):
        feat, fcache = self.fine_extractor.apply(X)
        F = feat @ self.W
        if self.mode == "sm":
            return F, np.zeros((X.shape[0], 0)), (feat, fcache, None, None)
        if self.coarse_extractor is None:
            cfeat, ccache = feat, None
        else:
            cfeat, ccache = self.coarse_extractor.apply(X)
        if self.W_coarse:
            FC = np.concatenate([cfeat @ Wj for Wj in self.W_coarse], axis=1)
        else:
            FC = np.zeros((X.shape[0], 0))
        return F, FC, (feat, fcache, cfeat, ccache)

    def score_batch(self, X):
        """Fine and flattened coarse scores, shapes (B, k) and (B, sum k_j)."""
        F, FC, _ = self._scores(self._check_input(X))
        return F, FC

    def score(self, x) -> ScoreSet:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise ShapeMismatch(f"input has shape {x.shape}, expected ({self.input_dim},)")
        F, FC = self.score_batch(x[None, :])
        return ScoreSet.from_flat(self.loss_graph, F[0], FC[0])

    def prior_value(self) -> float:
        if not self._prior_on:
            return 0.0
        return prior_penalty(self.graph, self.W, self.W_coarse, self.loss_cfg.lam)

    def loss_batch(self, X, Y) -> float:
        """Mean data loss over the batch plus the prior penalty."""
        X = self._check_input(X)
        F, FC, _ = self._scores(X)
        losses = loss_and_grad_batch(self.loss_graph, F, FC, Y, self.loss_cfg)[0]
        return float(losses.mean()) + self.prior_value()

    def backprop_batch(self, X, Y):
        """Loss and gradient of every parameter block for a mini-batch.

        The loss is the batch-mean data term plus the prior penalty;
        gradients follow the same scaling.  Returns ``(loss, grads)`` with
        ``grads`` keyed like :meth:`parameters`.
        """
        X = self._check_input(X)
        Y = np.asarray(Y, dtype=np.int64)
        B = X.shape[0]
        F, FC, (feat, fcache, cfeat, ccache) = self._scores(X)
        losses, DF, DFC = loss_and_grad_batch(self.loss_graph, F, FC, Y, self.loss_cfg)[:3]
        DF = DF / B
        DFC = DFC / B

        grads = {"W": feat.T @ DF}
        d_feat = DF @ self.W.T
        if self.mode != "sm":
            offs = self.graph.offsets
            d_cfeat = np.zeros_like(cfeat)
            for j, Wj in enumerate(self.W_coarse):
                blk = DFC[:, offs[j]:offs[j + 1]]
                grads[f"W_coarse.{j}"] = cfeat.T @ blk
                d_cfeat += blk @ Wj.T
            if self.coarse_extractor is None:
                d_feat = d_feat + d_cfeat
            else:
                for n, g in self.coarse_extractor.grads(ccache, d_cfeat).items():
                    grads[f"coarse.{n}"] = g
        for n, g in self.fine_extractor.grads(fcache, d_feat).items():
            grads[f"fine.{n}"] = g

        loss = float(losses.mean())
        if self._prior_on:
            lam = self.loss_cfg.lam
            loss += prior_penalty(self.graph, self.W, self.W_coarse, lam)
            dW, dWc = prior_gradient(self.graph, self.W, self.W_coarse, lam)
            grads["W"] = grads["W"] + dW
            for j, g in enumerate(dWc):
                grads[f"W_coarse.{j}"] = grads[f"W_coarse.{j}"] + g
        return loss, grads

    def backprop(self, x, y: int):
        """Single-sample :meth:`backprop_batch`."""
        return self.backprop_batch(np.asarray(x, dtype=np.float64)[None, :], [y])

    def predict_batch(self, X):
        """Fine marginals (B, k) and coarse marginals (B, sum k_j) on the full graph.

        In ``sm`` mode the coarse marginals are group sums of the softmax.
        """
        X = self._check_input(X)
        F, FC, _ = self._scores(X)
        if self.mode == "sm":
            FC = np.zeros((X.shape[0], self.graph.total_coarse))
        _, P, PC, _ = forward_batch(self.graph, F, FC)
        return P, PC

    def copy(self) -> "Model":
        return _rebuild(self, [a.copy() for _, a in self.parameters()])


def init_model(graph: LabelGraph, mode: str, input_dim: int, *, kind="identity",
               feature_dim=None, hidden_dim=0, coarse_kind=None, coarse_feature_dim=None,
               coarse_hidden_dim=None, loss_cfg=None, seed=0) -> Model:
    """Build a model with uniformly initialised weights (biases zero)."""
    rng = np.random.default_rng(seed)
    feature_dim = input_dim if feature_dim is None else feature_dim
    fine = FeatureExtractor.create(kind, input_dim, feature_dim, hidden_dim, rng)
    coarse = None
    if mode == "bglm":
        ck = coarse_kind or kind
        cd = coarse_feature_dim if coarse_feature_dim is not None else feature_dim
        ch = coarse_hidden_dim if coarse_hidden_dim is not None else hidden_dim
        coarse = FeatureExtractor.create(ck, input_dim, cd, ch, rng)
    d = fine.out_dim
    W = _glorot(rng, d, graph.k, (d, graph.k))
    W_coarse = []
    if mode != "sm":
        dc = (coarse or fine).out_dim
        W_coarse = [_glorot(rng, dc, s, (dc, s)) for s in graph.coarse_sizes]
    return Model(mode, graph, fine, W, W_coarse, coarse, loss_cfg or LossConfig())


def _rebuild(model, arrays):
    """Same architecture as ``model`` with parameter arrays replaced in order."""
    it = iter(arrays)

    def ext(e):
        if e is None:
            return None
        return FeatureExtractor(e.kind, e.in_dim, e.out_dim, e.hidden_dim,
                                {n: next(it) for n, _ in e.param_shapes()})

    fine = ext(model.fine_extractor)
    coarse = ext(model.coarse_extractor)
    W = next(it)
    W_coarse = [next(it) for _ in model.W_coarse]
    return Model(model.mode, model.graph, fine, W, W_coarse, coarse, model.loss_cfg)


# checkpoint format, all little-endian:
#   magic "BGLM" | u32 version | u32 mode | u32 k | u32 m | u32 k_j * m
#   | f64 lambda | u8 has_weights | f64 coarse weight * m (if has_weights)
#   | u32 n_extractors | per extractor: u32 kind, in_dim, hidden_dim, out_dim
#   | u32 n_blocks | per block: u32 rows, u32 cols, f64 * rows*cols row-major

def save_model(model: Model) -> bytes:
    g = model.graph
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<4I", FORMAT_VERSION, MODES.index(model.mode), g.k, g.m))
    buf.write(struct.pack(f"<{g.m}I", *g.coarse_sizes))
    cw = model.loss_cfg.coarse_term_weights
    buf.write(struct.pack("<dB", model.loss_cfg.lam, cw is not None))
    if cw is not None:
        buf.write(struct.pack(f"<{len(cw)}d", *cw))
    exts = model.extractors()
    buf.write(struct.pack("<I", len(exts)))
    for e in exts:
        buf.write(struct.pack("<4I", KINDS.index(e.kind), e.in_dim, e.hidden_dim, e.out_dim))
    params = model.parameters()
    buf.write(struct.pack("<I", len(params)))
    for _, a in params:
        a2 = np.atleast_2d(a) if a.ndim == 1 else a
        rows, cols = (1, a.shape[0]) if a.ndim == 1 else a.shape
        buf.write(struct.pack("<2I", rows, cols))
        buf.write(np.ascontiguousarray(a2, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ParseError(f"checkpoint truncated at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, n):
        size = 8 * n
        if self.pos + size > len(self.data):
            raise ParseError(f"checkpoint truncated at byte {self.pos}")
        out = np.frombuffer(self.data, dtype="<f8", count=n, offset=self.pos).astype(np.float64)
        self.pos += size
        return out


def load_model(data: bytes, graph: LabelGraph) -> Model:
    """Inverse of :func:`save_model`; ``graph`` must match the stored sizes."""
    if data[:4] != MAGIC:
        raise ParseError("not a BGL model checkpoint (bad magic)")
    r = _Reader(data)
    r.pos = 4
    version, mode_tag, k, m = r.take("<4I")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    if mode_tag >= len(MODES):
        raise ParseError(f"unknown mode tag {mode_tag}")
    sizes = r.take(f"<{m}I")
    if k != graph.k or tuple(sizes) != graph.coarse_sizes:
        raise ShapeMismatch(
            f"checkpoint was saved for k={k}, sizes={list(sizes)}; graph has "
            f"k={graph.k}, sizes={list(graph.coarse_sizes)}"
        )
    lam, has_w = r.take("<dB")
    cw = r.take(f"<{m}d") if has_w else None
    (n_ext,) = r.take("<I")
    exts = []
    for _ in range(n_ext):
        kind, in_dim, hid, out = r.take("<4I")
        if kind >= len(KINDS):
            raise ParseError(f"unknown extractor kind tag {kind}")
        exts.append(FeatureExtractor(KINDS[kind], in_dim, out, hid))
    (n_blocks,) = r.take("<I")
    arrays = []
    for _ in range(n_blocks):
        rows, cols = r.take("<2I")
        arrays.append(r.array(rows * cols).reshape(rows, cols))
    if r.pos != len(data):
        raise ParseError(f"{len(data) - r.pos} trailing bytes in checkpoint")

    it = iter(arrays)
    try:
        for e in exts:
            for n, shape in e.param_shapes():
                e.params[n] = next(it).reshape(shape)
        W = next(it)
        W_coarse = [next(it) for _ in range(m if MODES[mode_tag] != "sm" else 0)]
    except StopIteration:
        raise ParseError("checkpoint has fewer parameter blocks than its architecture needs") from None
    except ValueError as exc:
        raise ParseError(f"parameter block has the wrong size: {exc}") from None
    cfg = LossConfig(lam, cw)
    coarse = exts[1] if len(exts) > 1 else None
    return Model(MODES[mode_tag], graph, exts[0], W, W_coarse, coarse, cfg)


def write_model(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(model))


def read_model(path, graph: LabelGraph) -> Model:
    with open(path, "rb") as fh:
        return load_model(fh.read(), graph)
