"""Multi-task cost model: one shared trunk, one head per hardware target.

Task 0 is the target platform.  A sample may carry labels for any subset of
tasks and only present labels enter the loss, so a head whose task has no
labels in a batch receives exactly zero gradient.
"""

from __future__ import annotations

from .dataset import DatasetStore
from .errors import ConfigError
from .features import FeatureConfig
from .model import CostModel, ModelConfig
from .primitives import DEFAULT_REGISTRY, PrimitiveTypeRegistry
from .training import (
    TrainConfig, batch_gradients, build_featurizer, build_samples, fit, multitask_loss,
)

mtl_loss = multitask_loss
mtl_gradients = batch_gradients


class MultiTaskModel(CostModel):
    def __init__(self, config: ModelConfig, featurizer, params=None, tasks=(), seed: int = 0):
        if len(tasks) < 2:
            raise ConfigError("a multi-task model needs at least two tasks")
        super().__init__(config, featurizer, params, tasks, seed)

    @property
    def target_task(self) -> str:
        return self.tasks[0]


def new_multitask_model(train_store: DatasetStore, tasks: list[str],
                        model_config: ModelConfig | None = None,
                        feature_config: FeatureConfig | None = None,
                        registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY,
                        seed: int = 0) -> MultiTaskModel:
    """Fresh model whose token table spans the training data of every task."""
    fz = build_featurizer(train_store.subset(), feature_config, registry)
    return MultiTaskModel(model_config or ModelConfig(), fz, tasks=list(tasks), seed=seed)


def train_mtl(model: CostModel, store: DatasetStore, cfg: TrainConfig,
              loss_kinds: list[str] | None = None):
    """Joint training on every task's train split; returns (model, {task: History}).

    Early stopping and the returned parameters follow the target task's
    validation top-k.
    """
    train_t = build_samples(store.subset("train"), model.featurizer, model.tasks)
    val_store = store.subset("val")
    val_t = build_samples(val_store, model.featurizer, model.tasks) if val_store.records else None
    return fit(model, train_t, val_t, cfg, loss_kinds)


def extract_single_task(model: CostModel, task) -> CostModel:
    """The shared trunk plus one head, as a standalone single-head model."""
    k = model.task_index(task)
    params = {}
    for name, value in model.params.items():
        if name.startswith("head."):
            parts = name.split(".")
            if int(parts[1]) != k:
                continue
            name = ".".join(["head", "0"] + parts[2:])
        params[name] = value.copy()
    return CostModel(model.config, model.featurizer, params, tasks=[model.tasks[k]])
