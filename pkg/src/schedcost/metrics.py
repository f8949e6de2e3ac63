"""Weighted top-k score of a cost model's ranking.

For each (model, subgraph) group the k candidates with the highest predicted
score are inspected and the best true latency among them is compared with
the group's true optimum::

    top-k = sum(min_latency * weight) / sum(best_latency_in_top_k * weight)
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import DatasetStore


@dataclass
class EvalGroup:
    latencies: np.ndarray
    scores: np.ndarray
    weight: float = 1.0
    workload: str = ""
    subgraph: str = ""

    def __post_init__(self):
        self.latencies = np.asarray(self.latencies, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.latencies.size == 0:
            raise ValueError("an evaluation group needs at least one candidate")
        if self.latencies.shape != self.scores.shape:
            raise ValueError("latencies and scores must align")

    @property
    def min_latency(self) -> float:
        return float(self.latencies.min())

    def best_in_top(self, k: int) -> float:
        """Best true latency among the k highest-scored candidates (k clamped)."""
        top = np.argsort(-self.scores, kind="stable")[:k]
        return float(self.latencies[top].min())


def top_k_score(groups: Sequence[EvalGroup], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    num = sum(g.min_latency * g.weight for g in groups)
    den = sum(g.best_in_top(k) * g.weight for g in groups)
    return num / den


def grouped_top_k(latencies, scores, group_index, k, weights=None) -> float:
    """Array form of :func:`top_k_score`; ``group_index`` labels each candidate."""
    gi = np.asarray(group_index)
    lat = np.asarray(latencies, dtype=np.float64)
    sc = np.asarray(scores, dtype=np.float64)
    num = den = 0.0
    for g in np.unique(gi):
        idx = np.flatnonzero(gi == g)
        w = 1.0 if weights is None else weights[g]
        top = idx[np.argsort(-sc[idx], kind="stable")[:k]]
        num += lat[idx].min() * w
        den += lat[top].min() * w
    return num / den


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    rows: list[dict] = field(default_factory=list)
    per_workload: dict[str, dict[int, float]] = field(default_factory=dict)
    aggregate: dict[int, float] = field(default_factory=dict)

    def top(self, k: int) -> float:
        return self.aggregate[k]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["workload", "subgraph", "weight"] + [f"top{k}" for k in self.ks])
            for r in self.rows:
                w.writerow([r["workload"], r["subgraph"], r["weight"]]
                           + [repr(r[f"top{k}"]) for k in self.ks])

    def to_json(self) -> dict:
        return {
            "aggregate": {f"top{k}": v for k, v in self.aggregate.items()},
            "per_workload": {wl: {f"top{k}": v for k, v in d.items()}
                             for wl, d in sorted(self.per_workload.items())},
            "groups": len(self.rows),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def build_groups(store: DatasetStore, scores: np.ndarray) -> list[EvalGroup]:
    """One group per (workload, subgraph) in record order, scores aligned to records."""
    idx: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, r in enumerate(store.records):
        idx[(r.workload, r.subgraph_id)].append(i)
    lat = np.array([r.latency for r in store.records])
    return [EvalGroup(lat[ii], scores[ii], store.weight(wl, sg), wl, sg)
            for (wl, sg), ii in idx.items()]


def report_from_groups(groups: list[EvalGroup], ks=(1, 5)) -> EvalReport:
    ks = tuple(ks)
    rep = EvalReport(ks)
    for g in groups:
        row = {"workload": g.workload, "subgraph": g.subgraph, "weight": g.weight}
        for k in ks:
            row[f"top{k}"] = g.min_latency / g.best_in_top(k)
        rep.rows.append(row)
    by_wl: dict[str, list[EvalGroup]] = defaultdict(list)
    for g in groups:
        by_wl[g.workload].append(g)
    rep.per_workload = {wl: {k: top_k_score(gs, k) for k in ks} for wl, gs in by_wl.items()}
    rep.aggregate = {k: top_k_score(groups, k) for k in ks}
    return rep


def evaluate(model, store: DatasetStore, split: str | None = "test", task=0,
             ks=(1, 5)) -> EvalReport:
    """Score every candidate of ``split`` on the task's hardware and report top-k.

    ``model`` is anything with ``predict(sequences, task)``; for a multi-task
    model ``task`` picks the head and also selects that head's hardware records.
    """
    sub = store.subset(split) if split is not None else store
    tasks = getattr(model, "tasks", None)
    if tasks is not None and len(sub.hardware_ids) > 1:
        hw = tasks[model.task_index(task)]
        sub = sub.subset(hardware_id=hw)
    if not sub.records:
        raise ValueError(f"no records to evaluate in split {split!r}")
    scores = np.asarray(model.predict([r.sequence for r in sub.records], task), dtype=np.float64)
    return report_from_groups(build_groups(sub, scores), ks)
