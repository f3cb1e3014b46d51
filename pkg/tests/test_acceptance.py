"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
also repeated at the end of the terminal report.
"""
import math
import time

import numpy as np

from bgl.bench import bench_config, bench_grid
from bgl.graph import LabelGraph
from bgl.loss import (
    LossConfig,
    ScoreSet,
    backward_fast,
    backward_naive,
    forward,
    nll,
    prior_gradient,
    prior_penalty,
)
from bgl.model import init_model, save_model
from bgl.oracle import enumerate_joint, fd_gradient, softmax_reference
from bgl.synth import BENCHMARK_SPEC, BENCHMARK_TEST_PER_CLASS, SynthSpec, generate, train_test
from bgl.trainer import TrainConfig, evaluate, train

from conftest import random_instance

RESULTS = []


def report(number, name, passed, detail):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {name} ({detail})"
    RESULTS.append(line)
    print(line)
    assert passed, line


def suite(seed, n, **kw):
    rng = np.random.default_rng(seed)
    return [random_instance(rng, **kw) for _ in range(n)]


def rel_max(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def rel_norm(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8))


def test_criterion_1_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    cases = suite(101, 1000, max_k=8, max_m=4, max_kj=4, scale=2.0)
    for g, scores, _ in cases:
        post = forward(g, scores)
        table = enumerate_joint(g, scores)
        worst = max(worst, abs(math.exp(post.log_z) - table.z) / table.z)
        worst = max(worst, rel_max(post.p, table.p))
        for a, b in zip(post.p_coarse, table.p_coarse):
            # empty groups are exactly 0 on both sides
            nz = b > 0
            worst = max(worst, rel_max(a[nz], b[nz]))
            assert not a[~nz].any()
    secs = time.perf_counter() - t0
    report(1, "forward matches joint enumeration", worst < 1e-10 and secs < 10,
           f"{len(cases)} instances, max rel err {worst:.2e}, {secs:.1f}s")


def test_criterion_2_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst_nll = worst_prior = 0.0
    n = 0
    cross_covered = 0
    for g, scores, y in suite(202, 200, max_k=6, max_m=4, max_kj=3, scale=2.0, min_m=1):
        k = g.k
        cross_covered += g.m >= 2

        def loss(v):
            return nll(g, ScoreSet.from_flat(g, v[:k], v[k:]), y)

        num = fd_gradient(loss, np.concatenate([scores.f, scores.coarse_flat]), 1e-5)
        post = forward(g, scores)
        for fn in (backward_naive, backward_fast):
            out = fn(g, post, y)
            worst_nll = max(worst_nll, rel_norm(np.concatenate([out.df, out.df_coarse_flat]), num))

        d, lam = 3, float(rng.uniform(0.01, 2.0))
        W = rng.normal(size=(d, k))
        Wc = [rng.normal(size=(d, s)) for s in g.coarse_sizes]
        sizes = np.cumsum([W.size] + [x.size for x in Wc])[:-1]

        def prior(v):
            parts = np.split(v, sizes)
            return prior_penalty(g, parts[0].reshape(W.shape),
                                 [p.reshape(x.shape) for p, x in zip(parts[1:], Wc)], lam)

        num = fd_gradient(prior, np.concatenate([W.ravel()] + [x.ravel() for x in Wc]), 1e-5)
        dW, dWc = prior_gradient(g, W, Wc, lam)
        worst_prior = max(worst_prior, rel_norm(np.concatenate([dW.ravel()] + [x.ravel() for x in dWc]), num))
        n += 1
    secs = time.perf_counter() - t0
    ok = worst_nll < 1e-5 and worst_prior < 1e-5 and secs < 30 and cross_covered > n // 2
    report(2, "analytic gradients match central differences", ok,
           f"{n} instances ({cross_covered} with cross-type terms), nll max rel err {worst_nll:.2e}, "
           f"prior max rel err {worst_prior:.2e}, {secs:.1f}s")


def test_criterion_3_fast_equals_naive():
    t0 = time.perf_counter()
    cases = suite(303, 1000, max_k=8, max_m=4, max_kj=4, scale=2.0)
    rng = np.random.default_rng(303)
    tiny = LabelGraph(2, [1, 1, 1], np.zeros((2, 3), dtype=int))
    for _ in range(10):
        sc = ScoreSet(rng.normal(0, 2, 2), [rng.normal(0, 2, 1) for _ in range(3)])
        cases.append((tiny, sc, int(rng.integers(2))))
    empty = sum(any((g.group_sizes(j) == 0).any() for j in range(g.m)) for g, _, _ in cases)
    worst = 0.0
    for g, scores, y in cases:
        post = forward(g, scores)
        a, b = backward_fast(g, post, y), backward_naive(g, post, y)
        worst = max(worst, np.abs(a.df - b.df).max(),
                    np.abs(a.df_coarse_flat - b.df_coarse_flat).max() if g.m else 0.0)
    secs = time.perf_counter() - t0
    report(3, "fast backward equals naive backward", worst < 1e-12 and secs < 10 and empty > 0,
           f"{len(cases)} instances incl. the k=2, m=3, kj=1 example and {empty} with empty groups, "
           f"max abs diff {worst:.1e}, {secs:.1f}s")


def softmax_sgd(X, Y, W, cfg):
    """Independent SGD for softmax regression with the trainer's schedule."""
    W = W.copy()
    rng = np.random.default_rng(cfg.rng_seed)
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        order = rng.permutation(len(Y))
        for s in range(0, len(Y), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            F = X[idx] @ W
            F = F - F.max(axis=1, keepdims=True)
            P = np.exp(F)
            P /= P.sum(axis=1, keepdims=True)
            P[np.arange(len(idx)), Y[idx]] -= 1.0
            W -= lr * (X[idx].T @ P / len(idx) + cfg.weight_decay * W)
        lr *= cfg.lr_decay
    return W


def test_criterion_4_softmax_degeneration():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 12))
        f = rng.normal(0, 2, k)
        y = int(rng.integers(k))
        g = LabelGraph(k)
        log_z, p = softmax_reference(f)
        post = forward(g, ScoreSet(f))
        ce = log_z - f[y]
        grad = p.copy()
        grad[y] -= 1.0
        worst = max(worst, abs(post.log_z - log_z), np.abs(post.p - p).max(),
                    abs(nll(g, ScoreSet(f), y) - ce),
                    np.abs(backward_naive(g, post, y).df - grad).max(),
                    np.abs(backward_fast(g, post, y).df - grad).max())

    train_worst = 0.0
    for seed in range(3):
        ds, gk = generate(SynthSpec(k=6, m=0, coarse_sizes=(), d=4, n=8, seed=seed))
        model = init_model(gk, "sm", 4, seed=seed)
        cfg = TrainConfig(epochs=5, batch_size=7, rng_seed=seed)
        _, trained = train(model, ds, cfg, clock=None)
        W_ref = softmax_sgd(ds.X, ds.y, model.W, cfg)
        train_worst = max(train_worst, np.abs(trained.W - W_ref).max())
    report(4, "no coarse types reduces to plain softmax",
           worst < 1e-14 and train_worst < 1e-14,
           f"100 instances, max diff {worst:.1e}; SM training max weight diff {train_worst:.1e}")


def test_criterion_5_invariants():
    worst_norm = worst_sum = worst_shift = 0.0
    rng = np.random.default_rng(505)
    cases = suite(101, 1000, max_k=8, max_m=4, max_kj=4, scale=2.0)
    for g, scores, y in cases:
        post = forward(g, scores)
        worst_norm = max(worst_norm, abs(post.p.sum() - 1))
        for pc in post.p_coarse:
            worst_norm = max(worst_norm, abs(pc.sum() - 1))
        out = backward_fast(g, post, y)
        worst_sum = max(worst_sum, abs(out.df.sum()), *[abs(d.sum()) for d in out.df_coarse])
        shifted = ScoreSet(scores.f + rng.normal(0, 3), [c + rng.normal(0, 3) for c in scores.f_coarse])
        sp = forward(g, shifted)
        worst_shift = max(worst_shift, np.abs(sp.p - post.p).max(),
                          np.abs(sp.p_coarse_flat - post.p_coarse_flat).max() if g.m else 0.0)
    ok = worst_norm < 1e-12 and worst_sum < 1e-10 and worst_shift < 1e-12
    report(5, "normalisation, zero-sum gradients, shift invariance", ok,
           f"{len(cases)} instances, norm {worst_norm:.1e}, grad sum {worst_sum:.1e}, shift {worst_shift:.1e}")


def test_criterion_6_benchmark():
    t0 = time.perf_counter()
    rows = {r.variant: r.median_ns for r in bench_config(1000, 3, 100, repetitions=400, warmup=20)}
    speedup = rows["bgl_backward_naive"] / rows["bgl_backward_fast"]
    fwd_ratio = rows["bgl_forward"] / rows["softmax_forward"]
    grid = bench_grid([100, 1000], [1, 3], [10, 100], repetitions=50, warmup=5)
    secs = time.perf_counter() - t0
    ok = speedup >= 5 and fwd_ratio <= 3 and secs < 120
    report(6, "fast backward speed-up and forward overhead", ok,
           f"k=1000 m=3 kj=100: fast {speedup:.1f}x faster than naive, forward {fwd_ratio:.2f}x softmax; "
           f"grid of {len(grid)} rows, {secs:.1f}s")


def test_criterion_7_small_data_regularisation():
    t0 = time.perf_counter()
    accs = {"sm": [], "bgl1": []}
    for seed in range(5):
        tr, te, g = train_test(BENCHMARK_SPEC, BENCHMARK_SPEC.n, BENCHMARK_TEST_PER_CLASS, seed=seed)
        for mode in accs:
            model = init_model(g, mode, BENCHMARK_SPEC.d, loss_cfg=LossConfig(), seed=seed)
            _, model = train(model, tr, TrainConfig(rng_seed=seed, eval_every=100), clock=None)
            accs[mode].append(evaluate(model, te).fine_acc)
    sm, bgl = float(np.mean(accs["sm"])), float(np.mean(accs["bgl1"]))
    secs = time.perf_counter() - t0
    ok = 0.4 <= sm <= 0.8 and bgl >= sm and secs < 300
    report(7, "BGL1 at least matches SM with 5 samples per class", ok,
           f"mean test accuracy SM {sm:.3f}, BGL1 {bgl:.3f} over 5 seeds, {secs:.1f}s")


def test_criterion_8_determinism(tmp_path):
    outputs = []
    ds, g = generate(BENCHMARK_SPEC)
    for run in range(2):
        path = tmp_path / f"model{run}.bin"
        model = init_model(g, "bglm", ds.d, kind="hidden", feature_dim=16, hidden_dim=24, seed=4)
        cfg = TrainConfig(epochs=5, rng_seed=4, checkpoint_path=str(path), workers=2)
        rep, trained = train(model, ds, cfg, clock=None)
        outputs.append((rep.to_csv().encode(), path.read_bytes(), save_model(trained)))
    same = outputs[0] == outputs[1]
    report(8, "identical seeds give byte-identical reports and checkpoints", same,
           f"CSV {len(outputs[0][0])} bytes, checkpoint {len(outputs[0][1])} bytes")
