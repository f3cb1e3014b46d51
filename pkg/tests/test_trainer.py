import math

import numpy as np
import pytest

from bgl.errors import DivergedLoss, InvalidSpec
from bgl.graph import LabelGraph
from bgl.model import FeatureExtractor, Model, init_model, read_model, save_model
from bgl.synth import Dataset, SynthSpec, generate
from bgl.trainer import TrainConfig, evaluate, train


def separable(rng, n=40):
    X = np.concatenate([rng.normal(2.0, 0.5, (n, 2)), rng.normal(-2.0, 0.5, (n, 2))])
    return Dataset(X, np.repeat([0, 1], n), LabelGraph(2))


def small_problem(seed=0, mode="bgl1"):
    ds, g = generate(SynthSpec(k=8, m=2, coarse_sizes=(2, 4), d=6, n=6, seed=seed))
    return init_model(g, mode, 6, seed=seed), ds


def test_separable_reaches_full_accuracy(rng):
    ds = separable(rng)
    m = init_model(ds.graph, "sm", 2, seed=0)
    report, trained = train(m, ds, TrainConfig(epochs=50, batch_size=8))
    assert report.final.fine_acc == 1.0
    assert evaluate(trained, ds).fine_acc == 1.0


def test_zero_learning_rate_changes_nothing():
    m, ds = small_problem()
    report, trained = train(m, ds, TrainConfig(epochs=5, learning_rate=0.0))
    for (_, a), (_, b) in zip(m.parameters(), trained.parameters()):
        np.testing.assert_array_equal(a, b)
    losses = [e.loss for e in report.epochs]
    assert losses == pytest.approx([losses[0]] * 5, rel=1e-12)


def test_input_model_is_not_modified():
    m, ds = small_problem()
    before = save_model(m)
    train(m, ds, TrainConfig(epochs=2))
    assert save_model(m) == before


def test_loss_decreases_on_convex_problem(rng):
    ds, g = generate(SynthSpec(k=6, m=0, coarse_sizes=(), d=5, n=10, seed=3))
    m = init_model(g, "sm", 5, seed=0)
    report, _ = train(m, ds, TrainConfig(epochs=50, learning_rate=0.01, lr_decay=1.0))
    assert report.epochs[49].loss < report.epochs[0].loss


@pytest.mark.parametrize("workers", [1, 3])
def test_bitwise_reproducible(tmp_path, workers):
    outs = []
    for run in range(2):
        m, ds = small_problem(mode="bglm")
        ck = tmp_path / f"run{run}.bin"
        cfg = TrainConfig(epochs=4, batch_size=5, checkpoint_path=str(ck), workers=workers, rng_seed=7)
        report, _ = train(m, ds, cfg, clock=None)
        outs.append((report.to_csv(), ck.read_bytes()))
    assert outs[0] == outs[1]


def test_workers_agree_with_serial():
    results = []
    for workers in (1, 4):
        m, ds = small_problem()
        report, trained = train(m, ds, TrainConfig(epochs=3, batch_size=7, workers=workers), clock=None)
        results.append((report, trained))
    (ra, ma), (rb, mb) = results
    for (_, a), (_, b) in zip(ma.parameters(), mb.parameters()):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
    assert [e.loss for e in ra.epochs] == pytest.approx([e.loss for e in rb.epochs], rel=1e-10)


def test_report_csv_layout():
    m, ds = small_problem()
    report, _ = train(m, ds, TrainConfig(epochs=5, eval_every=2), clock=None)
    lines = report.to_csv().splitlines()
    assert lines[0] == "epoch,loss,fine_acc,coarse_acc_1,coarse_acc_2,seconds"
    assert len(lines) == 6
    # epochs 1, 3 are not evaluated; 5 is the last and always is
    assert lines[1].split(",")[2:5] == ["", "", ""]
    assert lines[2].split(",")[2] != ""
    assert lines[5].split(",")[2] != ""
    assert all(line.endswith(",0.0") for line in lines[1:])
    assert report.final.epoch == 5


def test_checkpoint_holds_final_model(tmp_path):
    m, ds = small_problem()
    ck = tmp_path / "m.bin"
    _, trained = train(m, ds, TrainConfig(epochs=3, checkpoint_path=str(ck)))
    assert save_model(read_model(ck, m.graph)) == save_model(trained)


def test_divergence_raises_with_report():
    m, ds = small_problem()
    with pytest.raises(DivergedLoss) as info:
        with np.errstate(all="ignore"):
            train(m, ds, TrainConfig(epochs=10, learning_rate=1e200))
    assert info.value.report is not None
    assert all(math.isfinite(e.loss) for e in info.value.report.epochs)


def test_bad_configs():
    with pytest.raises(InvalidSpec):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidSpec):
        TrainConfig(lr_decay=0.0)
    with pytest.raises(InvalidSpec):
        TrainConfig(learning_rate=-1.0)
    m, _ = small_problem()
    with pytest.raises(InvalidSpec):
        train(m, Dataset(np.zeros((0, 6)), np.zeros(0, dtype=int), m.graph), TrainConfig(epochs=1))


def test_uniform_scores_are_chance(rng):
    k, n = 4, 250
    X = rng.normal(size=(k * n, 3))
    ds = Dataset(X, np.repeat(np.arange(k), n), LabelGraph(k))
    m = Model("sm", ds.graph, FeatureExtractor("identity", 3, 3), np.zeros((3, k)))
    acc = evaluate(m, ds).fine_acc
    # 99% binomial interval around 1/4
    half = 2.576 * math.sqrt(0.25 * 0.75 / len(ds))
    assert abs(acc - 0.25) <= half


def test_perfect_scorer(rng):
    g = LabelGraph(4, [2], [[0], [1], [0], [1]])
    y = rng.integers(4, size=30)
    ds = Dataset(np.eye(4)[y] * 10, y, g)
    m = Model("bgl1", g, FeatureExtractor("identity", 4, 4), np.eye(4), [np.zeros((4, 2))])
    res = evaluate(m, ds)
    assert res.fine_acc == 1.0 and res.coarse_acc == [1.0]


def test_confident_fine_prediction_fixes_every_coarse_prediction():
    # if p_y > 1/2 then y's group holds more than half the mass in every type
    m, ds = small_problem()
    _, trained = train(m, ds, TrainConfig(epochs=20))
    P, PC = trained.predict_batch(ds.X)
    g = trained.graph
    checked = 0
    for p, pc, y in zip(P, PC, ds.y):
        if p.argmax() == y and p[y] > 0.5:
            checked += 1
            for j in range(g.m):
                assert pc[g.offsets[j]:g.offsets[j + 1]].argmax() == g.parent[y, j]
    assert checked > 0


def test_correct_fine_prediction_can_miss_the_coarse_one():
    # p = [.4, .3, .3] with groups {0} and {1, 2}: fine argmax 0, coarse argmax group 1
    g = LabelGraph(3, [2], [[0], [1], [1]])
    f = np.log([0.4, 0.3, 0.3])
    m = Model("sm", g, FeatureExtractor("identity", 3, 3), np.eye(3))
    X = f[None, :]
    P, PC = m.predict_batch(X)
    assert P[0].argmax() == 0
    assert PC[0].argmax() == 1
