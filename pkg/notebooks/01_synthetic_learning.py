"""Synthetic learning: loss, backbone and positional-encoding ablations.

Trains on a seeded 50-subgraph x 200-candidate corpus per seed and reports
test top-1/top-5 on the held-out workload next to random ranking.

    python3 notebooks/01_synthetic_learning.py [n_seeds]
"""

import sys

import numpy as np

from schedcost.experiments import learning_run

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)

variants = {
    "attention": dict(),
    "attention + positions": dict(positional_encoding=True),
    "lstm": dict(backbone="lstm"),
}
rows = []
for name, kw in variants.items():
    runs = [learning_run(s, **kw) for s in seeds]
    for loss in ("lambda_rank", "mse"):
        top = {k: float(np.mean([r[loss][k] for r in runs])) for k in (1, 5)}
        rows.append((name, loss, top[1], top[5]))
    rows.append((name, "random", float(np.mean([r["random"][1] for r in runs])),
                 float(np.mean([r["random"][5] for r in runs]))))

print(f"{'model':24s} {'loss':12s} {'top1':>7s} {'top5':>7s}")
for name, loss, t1, t5 in rows:
    print(f"{name:24s} {loss:12s} {t1:7.3f} {t5:7.3f}")
