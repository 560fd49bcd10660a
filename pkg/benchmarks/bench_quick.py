#!/usr/bin/env python3
"""Quick benchmark for smoke testing performance.

Run:
    PYTHONPATH=. python benchmarks/bench_quick.py
"""

import time

import numpy as np

from fairlens import nn, stats
from fairlens.data import SyntheticSpec, generate
from fairlens.fairness import combine_grid_search, lipton_thresholds
from fairlens.types import Method, Scores, Split

print("Quick benchmark: training, post-processing, statistics\n")

ds = generate(SyntheticSpec(n_samples=20000, n_features=10, seed=0))
val = Split.VALIDATION
rng = np.random.default_rng(0)

start = time.perf_counter()
nn.train(ds, nn.TrainConfig(method=Method.TWO_HEAD, epochs=1))
print(f"nn.train:            {(time.perf_counter() - start) * 1000:.1f}ms for 1 epoch")

n_val = len(ds.y(val))
f = rng.normal(size=n_val)
g = ds.s(val) + 0.3 * rng.normal(size=n_val)
scores = Scores(f, g, val)
for workers in (1, 4):
    start = time.perf_counter()
    combine_grid_search(scores, ds.s(val), ds.y(val), 0.05, workers=workers)
    elapsed = (time.perf_counter() - start) * 1000
    print(f"combine_grid_search: {elapsed:.1f}ms with {workers} worker(s)")

start = time.perf_counter()
lipton_thresholds(f, ds.s(val), ds.y(val), 0.05)
print(f"lipton_thresholds:   {(time.perf_counter() - start) * 1000:.1f}ms for {n_val} rows")

x = rng.normal(size=1000)
y = x + rng.normal(size=1000)
start = time.perf_counter()
for _ in range(100):
    stats.kendall_tau(x, y)
print(f"stats.kendall_tau:   {(time.perf_counter() - start) * 1000:.1f}ms for 100 ops")

X = rng.normal(size=(5000, 8))
labels = (X[:, 0] + rng.normal(size=5000) > 0).astype(np.int64)
start = time.perf_counter()
for _ in range(10):
    stats.logistic_fit(X, labels)
print(f"stats.logistic_fit:  {(time.perf_counter() - start) * 1000:.1f}ms for 10 fits")
