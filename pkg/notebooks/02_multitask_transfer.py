"""Multi-task transfer to a label-poor target, and how many source tasks help.

Part 1 compares single-task, fine-tuning and multi-task training as the
target's label fraction shrinks.  Part 2 keeps the target at 10% and adds
one to three correlated source oracles to the multi-task model.

    python3 notebooks/02_multitask_transfer.py [n_seeds]
"""

import sys

import numpy as np

from schedcost.experiments import Recipe, limit_labels, mtl_run, synthetic_store
from schedcost.metrics import evaluate
from schedcost.mtl import new_multitask_model, train_mtl
from schedcost.synthetic import SyntheticOracle

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 2)

print("target label fraction vs. method (target test top-5)")
for fraction in (0.05, 0.1, 0.3):
    runs = [mtl_run(s, fraction=fraction) for s in seeds]
    cells = {m: np.mean([r[m][5] for r in runs]) for m in ("single", "fine_tune", "mtl")}
    print(f"  {fraction:4.2f}  " + "  ".join(f"{m}={v:.4f}" for m, v in cells.items()))


def task_count_run(seed: int, sources: int, rho: float = 0.8, fraction: float = 0.1,
                   recipe: Recipe = Recipe()) -> float:
    base = SyntheticOracle(seed)
    oracles = {"tgt": base.correlated(seed + 7919, rho)}
    for n in range(sources):
        # source 0 is the base the target was twinned from (correlation rho);
        # later sources are fresh twins of that base (about rho^2 to the target)
        oracles[f"src{n}"] = base if n == 0 else base.correlated(seed + 104729 * n, rho)
    store = limit_labels(synthetic_store(recipe, oracles, seed), "tgt", fraction, seed)
    tasks = ["tgt"] + [f"src{n}" for n in range(sources)]
    model = new_multitask_model(store.subset("train"), tasks, recipe.model_config(),
                                recipe.feature_config(), seed=seed)
    model, _ = train_mtl(model, store, recipe.train_config(seed))
    return evaluate(model, store, "test", task="tgt").aggregate[5]


print("\nsource tasks in the multi-task model (target at 10% labels, test top-5)")
for sources in (1, 2, 3):
    print(f"  {sources}  {np.mean([task_count_run(s, sources) for s in seeds]):.4f}")
