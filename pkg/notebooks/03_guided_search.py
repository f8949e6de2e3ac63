"""Cost-model-guided tuning against exhaustive optima.

Trains one model on an enumerable-space corpus, then tunes fresh subgraphs
until each is within 5% of its brute-force optimum and compares the
measurement count with the exact random-search expectation.  The second
column counts whole rounds of measurements, which is what a tuner that
measures in batches actually pays.

    python3 notebooks/03_guided_search.py [n_seeds]
"""

import math
import sys

import numpy as np

from schedcost.experiments import search_model, search_run
from schedcost.metrics import evaluate

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10
model, oracle, store = search_model(0)
print("model test top-k:", {k: round(v, 3) for k, v in evaluate(model, store, "test").aggregate.items()})

for within in (0.05, 0.01, 0.0):
    res = search_run(model, oracle, seeds=range(n), within=within)
    per_round = [math.ceil(m / 10) * 10 for m in res.model_measurements]
    print(f"within {within:4.0%}: model {np.mean(res.model_measurements):6.1f} "
          f"(whole rounds {np.mean(per_round):6.1f})  random {np.mean(res.random_expected):6.1f}  "
          f"ratio {res.ratio:.3f} / {np.mean(per_round) / np.mean(res.random_expected):.3f}")
