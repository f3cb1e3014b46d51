"""
Does the label graph help when data is scarce?
----------------------------------------------

Synthetic data: 64 fine classes whose centres are sums of two coarse-class
centres (8 + 8) plus a small fine offset. SM trains a plain softmax, BGL1
adds both coarse heads and the weight prior on the same features.
Takes about a minute.
"""
import numpy as np

from bgl import BENCHMARK_SPEC, LossConfig, TrainConfig, evaluate, init_model, train, train_test
from bgl.synth import BENCHMARK_TEST_PER_CLASS

seeds = range(5)
print(f"{'n/class':>8} {'SM':>6} {'BGL1':>6}")
for n in (5, 10, 20, 40):
    acc = {"sm": [], "bgl1": []}
    for seed in seeds:
        tr, te, g = train_test(BENCHMARK_SPEC, n, BENCHMARK_TEST_PER_CLASS, seed=seed)
        for mode in acc:
            model = init_model(g, mode, BENCHMARK_SPEC.d, loss_cfg=LossConfig(), seed=seed)
            _, model = train(model, tr, TrainConfig(rng_seed=seed, eval_every=100), clock=None)
            acc[mode].append(evaluate(model, te).fine_acc)
    print(f"{n:8d} {np.mean(acc['sm']):6.3f} {np.mean(acc['bgl1']):6.3f}")

# the coarse heads come for free: last BGL1 model's type accuracies on test data
print("coarse accuracy (last run):", evaluate(model, te).coarse_acc)
