"""Training, fine-tuning and the sample tables they consume.

Single-task training is the one-head case of the multi-task loop, so both
paths share batching, optimizer and early stopping code.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .dataset import DatasetStore, dedup_labels
from .errors import ConfigError, NumericalError, ValidationError
from .features import FeatureConfig, Featurizer
from .losses import task_loss
from .metrics import grouped_top_k
from .model import CostModel, ModelConfig, network_backward, network_forward
from .primitives import DEFAULT_REGISTRY, PrimitiveTypeRegistry

log = logging.getLogger(__name__)

SHARED_PREFIXES = ("up.", "pos", "att.", "lstm.", "res.")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    groups_per_batch: int = 16
    group_size: int = 32
    seed: int = 0
    patience: int = 10
    eval_k: int = 5
    frozen: tuple[str, ...] = ()
    task_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2 for the ranking loss")
        if self.groups_per_batch < 1 or self.epochs < 0:
            raise ConfigError("groups_per_batch must be >= 1 and epochs >= 0")


@dataclass
class SampleTable:
    """Featurized samples with one label column per task.

    ``present[n, t]`` says whether sample n has a label for task t; absent
    labels are stored as NaN and never reach a loss.
    """

    X: np.ndarray
    labels: np.ndarray
    present: np.ndarray
    latency: np.ndarray
    group: np.ndarray
    group_keys: list[tuple[str, str]]
    group_weights: np.ndarray

    def __len__(self) -> int:
        return len(self.X)

    @property
    def num_tasks(self) -> int:
        return self.labels.shape[1]


def build_samples(store: DatasetStore, featurizer: Featurizer, tasks: list[str],
                  dedup: bool = True) -> SampleTable:
    """Join records of ``tasks`` (hardware ids) into per-sequence samples.

    Samples are keyed by (workload, subgraph, feature matrix); a sequence
    measured on several hardware targets becomes one sample with several
    labels.  Labels are normalized within each (hardware, subgraph) group of
    ``store``.
    """
    if dedup:
        store = dedup_labels(store, featurizer.config, featurizer.tokens)
    task_of = {hw: t for t, hw in enumerate(tasks)}
    recs = [(i, r) for i, r in enumerate(store.records) if r.hardware_id in task_of]
    if not recs:
        raise ValidationError(f"no records for tasks {tasks}")
    labels_all = store.labels()
    X_all = featurizer.transform([r.sequence for _, r in recs])
    keys: dict[tuple, int] = {}
    rows: list[int] = []
    group_index: dict[tuple[str, str], int] = {}
    lab = []
    lat = []
    grp = []
    T = len(tasks)
    for n, (i, r) in enumerate(recs):
        gk = (r.workload, r.subgraph_id)
        key = gk + (X_all[n].tobytes(),)
        s = keys.get(key)
        if s is None:
            s = keys[key] = len(rows)
            rows.append(n)
            lab.append([math.nan] * T)
            lat.append([math.nan] * T)
            grp.append(group_index.setdefault(gk, len(group_index)))
        t = task_of[r.hardware_id]
        if math.isnan(lab[s][t]) or labels_all[i] > lab[s][t]:
            lab[s][t] = labels_all[i]
            lat[s][t] = r.latency
    labels = np.array(lab, dtype=np.float64)
    group_keys = list(group_index)
    return SampleTable(
        X=X_all[rows], labels=labels, present=~np.isnan(labels),
        latency=np.array(lat, dtype=np.float64), group=np.array(grp, dtype=np.int64),
        group_keys=group_keys,
        group_weights=np.array([store.weight(wl, sg) for wl, sg in group_keys], dtype=np.float64),
    )


def build_featurizer(train_store: DatasetStore, feature_config: FeatureConfig | None = None,
                     registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY) -> Featurizer:
    """Token table and normalization fitted on the training records only."""
    fz = Featurizer(registry, feature_config)
    return fz.fit([r.sequence for r in train_store.records])


def make_batches(table: SampleTable, cfg: TrainConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Subgraph-grouped batches; every batch holds at least one target-task unit.

    A unit is up to ``group_size`` samples of one subgraph.  Samples labeled
    for the target task (task 0) are packed into the leading units of their
    subgraph; target units are spread round-robin over the batches (reused
    if there are fewer target units than batches) and the remaining units
    fill the batches in shuffled order.
    """
    units = []
    for g in range(len(table.group_keys)):
        idx = np.flatnonzero(table.group == g)
        idx = idx[rng.permutation(len(idx))]
        idx = idx[np.argsort(~table.present[idx, 0], kind="stable")]
        for c in range(0, len(idx), cfg.group_size):
            u = idx[c:c + cfg.group_size]
            units.append((u, bool(table.present[u, 0].any())))
    order = rng.permutation(len(units))
    units = [units[i] for i in order]
    target = [u for u, is_t in units if is_t]
    other = [u for u, is_t in units if not is_t]
    nb = max(1, math.ceil(len(units) / cfg.groups_per_batch))
    batches: list[list[np.ndarray]] = [[] for _ in range(nb)]
    for i, u in enumerate(target):
        batches[i % nb].append(u)
    if target:
        for i in range(len(target), nb):
            batches[i].append(target[int(rng.integers(len(target)))])
    for i, u in enumerate(other):
        batches[(len(target) + i) % nb].append(u)
    return [np.concatenate(b) for b in batches if b]


def multitask_loss(preds, labels, present, group, kinds, weights=None):
    """Sum of per-task losses over samples whose label is present.

    Tasks with no labels in the batch contribute zero loss and exactly zero
    upstream gradient.
    """
    B, T = preds.shape
    if not present.any():
        raise ValidationError("every label in the batch is absent")
    total = 0.0
    dpreds = np.zeros((B, T), dtype=np.float64)
    for t in range(T):
        rows = np.flatnonzero(present[:, t])
        if rows.size == 0:
            continue
        w = 1.0 if weights is None else weights[t]
        loss, grad = task_loss(kinds[t], preds[rows, t], labels[rows, t], group[rows])
        total += w * loss
        dpreds[rows, t] = w * grad
    return total, dpreds


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {n: np.zeros_like(v) for n, v in params.items()}
        self.v = {n: np.zeros_like(v) for n, v in params.items()}
        self.t = 0

    def step(self, params, grads, frozen=()) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for n, g in grads.items():
            if frozen and n.startswith(frozen):
                continue
            p = params[n]
            g = g.astype(p.dtype, copy=False)
            m, v = self.m[n], self.v[n]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= (c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)).astype(p.dtype)


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def column(self, name: str) -> list[float]:
        return [r[name] for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_top1", "val_top5"])
            for r in self.rows:
                w.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_top1"]),
                            repr(r["val_top5"])])


def table_top_k(model: CostModel, table: SampleTable, task: int, ks=(1, 5)) -> dict[int, float]:
    rows = np.flatnonzero(table.present[:, task])
    if rows.size == 0:
        return {k: math.nan for k in ks}
    scores = model.forward(table.X[rows], task)
    return {k: grouped_top_k(table.latency[rows, task], scores, table.group[rows], k,
                             table.group_weights)
            for k in ks}


def batch_gradients(model: CostModel, X, labels, present, group, kinds,
                    weights=None, segments=None, heads_only=False):
    preds, cache = network_forward(model.params, model.config, X, model.num_heads)
    loss, dpreds = multitask_loss(preds.astype(np.float64), labels, present, group, kinds, weights)
    grads = network_backward(model.params, model.config, cache, dpreds.astype(preds.dtype),
                             segments=segments, heads_only=heads_only)
    return loss, grads


def fit(model: CostModel, train_table: SampleTable, val_table: SampleTable | None,
        cfg: TrainConfig, loss_kinds: list[str] | None = None):
    """Optimize ``model`` in place; returns (best model, {task: History}).

    The returned model carries the parameters of the epoch with the best
    target-task validation top-``eval_k`` (epoch 0 is the initial model).
    """
    T = model.num_heads
    if train_table.num_tasks != T:
        raise ConfigError(f"samples have {train_table.num_tasks} tasks, model has {T} heads")
    kinds = loss_kinds or [model.config.loss] * T
    weights = cfg.task_weights
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg)
    frozen = tuple(cfg.frozen)
    heads_only = bool(frozen) and all(
        any(n.startswith(f) for f in frozen) for n in model.shared_names())
    histories = {t: History() for t in model.tasks}

    def record(epoch, train_loss):
        for t, name in enumerate(model.tasks):
            tk = table_top_k(model, val_table, t) if val_table is not None else {1: math.nan, 5: math.nan}
            histories[name].rows.append({"epoch": epoch, "train_loss": train_loss,
                                         "val_top1": tk[1], "val_top5": tk[5]})
        if val_table is None:
            return math.nan
        return table_top_k(model, val_table, 0, ks=(cfg.eval_k,))[cfg.eval_k]

    def initial_loss():
        losses = []
        for b in make_batches(train_table, cfg, np.random.default_rng(cfg.seed)):
            preds = model.forward_all(train_table.X[b]).astype(np.float64)
            l, _ = multitask_loss(preds, train_table.labels[b], train_table.present[b],
                                  train_table.group[b], kinds, weights)
            losses.append(l)
        return float(np.mean(losses))

    if cfg.epochs == 0:
        return model, histories
    best_score = record(0, initial_loss())
    best_params = {n: v.copy() for n, v in model.params.items()}
    best_epoch = 0
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for b in make_batches(train_table, cfg, rng):
            loss, grads = batch_gradients(
                model, train_table.X[b], train_table.labels[b], train_table.present[b],
                train_table.group[b], kinds, weights, heads_only=heads_only)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"loss became {loss} at epoch {epoch}; try a smaller learning rate "
                    f"(current lr={cfg.lr})")
            opt.step(model.params, grads, frozen)
            losses.append(loss)
        score = record(epoch, float(np.mean(losses)))
        log.debug("epoch %d loss %.5f val top-%d %.4f", epoch, np.mean(losses), cfg.eval_k, score)
        # a tie moves the checkpoint forward but does not reset patience
        improved = val_table is None or math.isnan(score) or score > best_score
        if improved or score == best_score:
            best_score = score
            best_params = {n: v.copy() for n, v in model.params.items()}
            best_epoch = epoch
        stale = 0 if improved else stale + 1
        if stale >= cfg.patience:
            break
    model.params = best_params
    for h in histories.values():
        h.best_epoch = best_epoch
    return model, histories


def _single_task_tables(model: CostModel, store: DatasetStore, hardware_id: str | None):
    hw = hardware_id
    if hw is None:
        hws = store.hardware_ids
        if len(hws) != 1:
            raise ValidationError(f"store holds hardware {hws}; pass hardware_id")
        hw = hws[0]
    train = build_samples(store.subset("train"), model.featurizer, [hw])
    val_store = store.subset("val", hardware_id=hw)
    val = build_samples(val_store, model.featurizer, [hw]) if val_store.records else None
    return hw, train, val


def train(model: CostModel, store: DatasetStore, cfg: TrainConfig,
          hardware_id: str | None = None):
    """Train a single-head model on the train split; returns (model, History)."""
    if model.num_heads != 1:
        raise ConfigError("train() expects a single-head model; use train_mtl")
    _, train_t, val_t = _single_task_tables(model, store, hardware_id)
    model, hist = fit(model, train_t, val_t, cfg)
    return model, hist[model.tasks[0]]


def new_model(train_store: DatasetStore, model_config: ModelConfig | None = None,
              feature_config: FeatureConfig | None = None,
              registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY, tasks=None,
              seed: int = 0) -> CostModel:
    fz = build_featurizer(train_store, feature_config, registry)
    tasks = tasks or train_store.hardware_ids[:1] or ["default"]
    return CostModel(model_config or ModelConfig(), fz, tasks=tasks, seed=seed)


def fine_tune(checkpoint, store: DatasetStore, cfg: TrainConfig,
              feature_config: FeatureConfig | None = None, hardware_id: str | None = None):
    """Continue training a saved model on another hardware target's data.

    ``checkpoint`` is a :class:`CostModel` or a checkpoint directory.  The
    checkpoint's own featurizer (tokens, normalization) is reused; a
    ``feature_config`` that differs from it is refused.
    """
    from .checkpoint import load_checkpoint

    model = load_checkpoint(checkpoint) if not isinstance(checkpoint, CostModel) else checkpoint.copy()
    if feature_config is not None and feature_config.digest() != model.featurizer.config.digest():
        raise ConfigError("feature config of the target data does not match the checkpoint "
                          f"({feature_config} vs {model.featurizer.config})")
    if model.num_heads != 1:
        raise ConfigError("fine_tune expects a single-head model")
    hw, train_t, val_t = _single_task_tables(model, store, hardware_id)
    model.tasks = [hw]
    model, hist = fit(model, train_t, val_t, cfg)
    return model, hist[hw]
