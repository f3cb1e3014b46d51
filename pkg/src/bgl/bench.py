"""Timing harness comparing the BGL layer with a plain softmax layer."""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .errors import InstanceTooLarge, InvalidSpec
from .graph import LabelGraph
from .loss import (
    LossConfig,
    ScoreSet,
    backward_fast,
    backward_naive,
    forward,
    softmax_backward,
    softmax_forward,
)

__all__ = [
    "BenchRow",
    "VARIANTS",
    "MAX_NAIVE_WORK",
    "time_call",
    "time_interleaved",
    "bench_config",
    "bench_grid",
    "rows_to_csv",
]

VARIANTS = ("bgl_forward", "bgl_backward_naive", "bgl_backward_fast",
            "softmax_forward", "softmax_backward")

# k * m * sum(k_j) bound on the naive backward pass
MAX_NAIVE_WORK = 10**9


@dataclass
class BenchRow:
    k: int
    m: int
    kj: int
    variant: str
    median_ns: float


def time_call(fn, repetitions: int, warmup: int = 3) -> float:
    """Median wall time of ``fn()`` in nanoseconds; warmup calls are discarded."""
    return time_interleaved({"fn": fn}, repetitions, warmup)["fn"]


def time_interleaved(fns: dict, repetitions: int, warmup: int = 3) -> dict:
    """Median ns per call of each function, timed round-robin.

    Interleaving keeps slow drift of the machine (frequency scaling, other
    load) from favouring whichever variant happens to run first.
    """
    if repetitions < 1:
        raise InvalidSpec(f"repetitions must be >= 1, got {repetitions}")
    if warmup < 0:
        raise InvalidSpec(f"warmup must be >= 0, got {warmup}")
    for _ in range(warmup):
        for fn in fns.values():
            fn()
    samples = {name: [] for name in fns}
    clock = time.perf_counter_ns
    for _ in range(repetitions):
        for name, fn in fns.items():
            t0 = clock()
            fn()
            samples[name].append(clock() - t0)
    return {name: float(statistics.median(v)) for name, v in samples.items()}


def bench_config(k: int, m: int, kj: int, repetitions: int = 50, warmup: int = 5,
                 seed: int = 0, variants=VARIANTS):
    """Time every variant on one random instance with ``m`` types of size ``kj``."""
    if repetitions < 1:
        raise InvalidSpec(f"repetitions must be >= 1, got {repetitions}")
    if k < 1 or m < 0 or kj < 1:
        raise InvalidSpec(f"need k >= 1, m >= 0, kj >= 1 (got {k}, {m}, {kj})")
    if k * m * m * kj > MAX_NAIVE_WORK:
        raise InstanceTooLarge(f"k={k}, m={m}, kj={kj} exceeds the naive-pass work limit")
    rng = np.random.default_rng(seed)
    sizes = [kj] * m
    parent = np.stack([rng.integers(0, kj, k) for _ in sizes], axis=1) if m else None
    graph = LabelGraph(k, sizes, parent)
    scores = ScoreSet(rng.normal(0, 2, k), [rng.normal(0, 2, kj) for _ in sizes])
    _ = scores.coarse_flat
    y = int(rng.integers(k))
    cfg = LossConfig()
    post = forward(graph, scores)
    _, p_soft = softmax_forward(scores.f)
    calls = {
        "bgl_forward": lambda: forward(graph, scores),
        "bgl_backward_naive": lambda: backward_naive(graph, post, y, cfg),
        "bgl_backward_fast": lambda: backward_fast(graph, post, y, cfg),
        "softmax_forward": lambda: softmax_forward(scores.f),
        "softmax_backward": lambda: softmax_backward(p_soft, y),
    }
    medians = time_interleaved({v: calls[v] for v in variants}, repetitions, warmup)
    return [BenchRow(k, m, kj, v, medians[v]) for v in variants]


def bench_grid(ks, ms, kjs, repetitions=50, warmup=5, seed=0):
    rows = []
    for k in ks:
        for m in ms:
            for kj in kjs:
                rows.extend(bench_config(k, m, kj, repetitions, warmup, seed))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "m", "kj", "variant", "median_ns"])
    for r in rows:
        w.writerow([r.k, r.m, r.kj, r.variant, f"{r.median_ns:.0f}"])
    return buf.getvalue()
