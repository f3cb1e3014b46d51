"""Mini-batch SGD for :class:`~bgl.model.Model`, plus evaluation and reports."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DivergedLoss, InvalidSpec, NonFiniteScore, ShapeMismatch
from .model import Model, write_model
from .synth import Dataset

__all__ = ["TrainConfig", "TrainReport", "EpochStats", "EvalResult", "train", "evaluate"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.1
    lr_decay: float = 0.97
    weight_decay: float = 1e-4
    rng_seed: int = 0
    eval_every: int = 1
    checkpoint_path: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1 or self.workers < 1:
            raise InvalidSpec("epochs must be >= 0; batch_size, eval_every and workers >= 1")
        if not 0 <= self.learning_rate:
            raise InvalidSpec(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 < self.lr_decay <= 1:
            raise InvalidSpec(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not 0 <= self.weight_decay:
            raise InvalidSpec(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class EvalResult:
    fine_acc: float
    coarse_acc: list


@dataclass
class EpochStats:
    epoch: int
    loss: float
    fine_acc: Optional[float]
    coarse_acc: Optional[list]
    seconds: float


@dataclass
class TrainReport:
    m: int
    epochs: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "fine_acc"]
                   + [f"coarse_acc_{j + 1}" for j in range(self.m)] + ["seconds"])
        for e in self.epochs:
            if e.fine_acc is None:
                accs = [""] * (1 + self.m)
            else:
                accs = [repr(e.fine_acc)] + [repr(a) for a in e.coarse_acc]
            w.writerow([e.epoch, repr(e.loss)] + accs + [repr(e.seconds)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @property
    def final(self) -> Optional[EpochStats]:
        evaluated = [e for e in self.epochs if e.fine_acc is not None]
        return evaluated[-1] if evaluated else None


def evaluate(model: Model, dataset: Dataset) -> EvalResult:
    """Top-1 fine accuracy and top-1 accuracy for every coarse type.

    Coarse predictions are the argmax of the coarse marginals; ground-truth
    coarse labels come from the graph's parent table.
    """
    if dataset.X.shape[1] != model.input_dim:
        raise ShapeMismatch(f"dataset has d={dataset.X.shape[1]}, model expects {model.input_dim}")
    if dataset.k != model.graph.k:
        raise ShapeMismatch(f"dataset has k={dataset.k}, model graph has k={model.graph.k}")
    if len(dataset) == 0:
        return EvalResult(float("nan"), [float("nan")] * model.graph.m)
    P, PC = model.predict_batch(dataset.X)
    g = model.graph
    fine = float(np.mean(P.argmax(axis=1) == dataset.y))
    coarse = []
    for j in range(g.m):
        blk = PC[:, g.offsets[j]:g.offsets[j + 1]]
        coarse.append(float(np.mean(blk.argmax(axis=1) == g.parent[dataset.y, j])))
    return EvalResult(fine, coarse)


def _batch_grad(model, X, Y, pool, workers):
    if pool is None or workers == 1 or len(Y) < 2:
        return model.backprop_batch(X, Y)
    chunks = [c for c in np.array_split(np.arange(len(Y)), workers) if len(c)]
    results = list(pool.map(lambda c: model.backprop_batch(X[c], Y[c]), chunks))
    # reduce in chunk order so the sum is reproducible
    B = len(Y)
    loss = 0.0
    grads = {}
    for c, (l, g) in zip(chunks, results):
        frac = len(c) / B
        loss += frac * l
        for name, v in g.items():
            grads[name] = grads[name] + frac * v if name in grads else frac * v
    return loss, grads


def train(model: Model, dataset: Dataset, cfg: TrainConfig = TrainConfig(), *,
          eval_set: Optional[Dataset] = None,
          clock: Optional[Callable[[], float]] = time.perf_counter):
    """Run SGD on a copy of ``model``; returns ``(report, trained_model)``.

    Each step applies ``theta -= lr * (grad + weight_decay * theta)`` where
    ``grad`` is the batch-mean data gradient plus the prior gradient.  The
    learning rate is multiplied by ``lr_decay`` after every epoch.
    Accuracies are measured on ``eval_set`` (training data when omitted)
    every ``eval_every`` epochs and after the last one.  Passing
    ``clock=None`` records 0 seconds per epoch, which makes the CSV report
    byte-reproducible.

    Raises :class:`DivergedLoss` (carrying the partial report) on a
    non-finite loss.
    """
    if len(dataset) == 0:
        raise InvalidSpec("cannot train on an empty dataset")
    if dataset.X.shape[1] != model.input_dim or dataset.k != model.graph.k:
        raise ShapeMismatch(
            f"dataset (d={dataset.X.shape[1]}, k={dataset.k}) does not fit model "
            f"(d={model.input_dim}, k={model.graph.k})"
        )
    model = model.copy()
    eval_set = dataset if eval_set is None else eval_set
    rng = np.random.default_rng(cfg.rng_seed)
    report = TrainReport(model.graph.m)
    n = len(dataset)
    lr = cfg.learning_rate
    params = model.parameters()
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = clock() if clock else 0.0
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                try:
                    loss, grads = _batch_grad(model, dataset.X[idx], dataset.y[idx], pool, cfg.workers)
                except NonFiniteScore as exc:
                    raise DivergedLoss(f"non-finite scores at epoch {epoch}", report) from exc
                if not math.isfinite(loss):
                    raise DivergedLoss(f"non-finite loss at epoch {epoch}", report)
                for name, theta in params:
                    step = grads[name]
                    if cfg.weight_decay:
                        step = step + cfg.weight_decay * theta
                    theta -= lr * step
                total += loss * len(idx)
            lr *= cfg.lr_decay
            fine = coarse = None
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                res = evaluate(model, eval_set)
                fine, coarse = res.fine_acc, res.coarse_acc
                if cfg.checkpoint_path:
                    write_model(model, cfg.checkpoint_path)
            seconds = (clock() - t0) if clock else 0.0
            report.epochs.append(EpochStats(epoch, total / n, fine, coarse, seconds))
            log.debug("epoch %d loss %.6g fine_acc %s", epoch, total / n, fine)
    finally:
        if pool is not None:
            pool.shutdown()
    if cfg.checkpoint_path and cfg.epochs == 0:
        write_model(model, cfg.checkpoint_path)
    return report, model
