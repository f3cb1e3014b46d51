"""
Naive vs fast cross-type gradient
---------------------------------

The naive backward pass loops over every pair of coarse types; the fast one
collects per-class accumulators once. Timings are medians over interleaved
repetitions, in microseconds.
"""
from bgl.bench import bench_config

print(f"{'k':>6} {'m':>3} {'kj':>4} {'fwd':>8} {'softmax':>8} {'naive':>9} {'fast':>8} {'speedup':>8}")
for k, m, kj in [(100, 2, 10), (1000, 3, 100), (2000, 4, 50), (5000, 3, 200)]:
    t = {r.variant: r.median_ns / 1e3 for r in bench_config(k, m, kj, repetitions=30, warmup=3)}
    print(f"{k:6d} {m:3d} {kj:4d} {t['bgl_forward']:8.1f} {t['softmax_forward']:8.1f} "
          f"{t['bgl_backward_naive']:9.1f} {t['bgl_backward_fast']:8.1f} "
          f"{t['bgl_backward_naive'] / t['bgl_backward_fast']:7.1f}x")
