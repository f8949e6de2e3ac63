"""Record storage, label normalization, splits and corpus statistics."""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .features import FeatureConfig, Featurizer, TokenTable, extract_features
from .primitives import (
    DEFAULT_REGISTRY, PrimitiveTypeRegistry, TensorProgramRecord, read_jsonl,
)

SPLITS = ("train", "val", "test")


def normalize_labels(latencies: Sequence[float]) -> np.ndarray:
    """``label = min_latency / latency`` so the fastest program scores 1.0."""
    lat = np.asarray(latencies, dtype=np.float64)
    if lat.size == 0:
        raise ValidationError("cannot normalize labels of an empty group")
    if np.any(lat <= 0):
        raise ValidationError("latencies must be positive")
    return lat.min() / lat


@dataclass
class DatasetStore:
    records: list[TensorProgramRecord]
    assignment: dict[str, str] = field(default_factory=dict)
    holdout_workloads: tuple[str, ...] = ()
    # (workload, subgraph_id) -> occurrence count of the subgraph in that workload
    weights: dict[tuple[str, str], int] = field(default_factory=dict)

    @classmethod
    def from_jsonl(cls, path, registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY) -> "DatasetStore":
        return cls(read_jsonl(path, registry))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def hardware_ids(self) -> list[str]:
        return sorted({r.hardware_id for r in self.records})

    @property
    def subgraph_ids(self) -> list[str]:
        return sorted({r.subgraph_id for r in self.records})

    def groups(self) -> dict[tuple[str, str], list[int]]:
        """Record indices keyed by ``(hardware_id, subgraph_id)``, in file order."""
        out: dict[tuple[str, str], list[int]] = defaultdict(list)
        for i, r in enumerate(self.records):
            out[(r.hardware_id, r.subgraph_id)].append(i)
        return dict(out)

    def labels(self) -> np.ndarray:
        """Per-record normalized label, computed within each (hardware, subgraph) group."""
        out = np.empty(len(self.records), dtype=np.float64)
        for idx in self.groups().values():
            out[idx] = normalize_labels([self.records[i].latency for i in idx])
        return out

    def split_of(self, record: TensorProgramRecord) -> str:
        return self.assignment[record.subgraph_id]

    def subset(self, split: str | None = None, hardware_id: str | None = None) -> "DatasetStore":
        recs = [r for r in self.records
                if (split is None or self.assignment.get(r.subgraph_id) == split)
                and (hardware_id is None or r.hardware_id == hardware_id)]
        keep = {r.subgraph_id for r in recs}
        return DatasetStore(recs, {s: a for s, a in self.assignment.items() if s in keep},
                            self.holdout_workloads, dict(self.weights))

    def weight(self, workload: str, subgraph_id: str) -> int:
        return self.weights.get((workload, subgraph_id), 1)

    def save_assignment(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dict(sorted(self.assignment.items())), fh, indent=1)
            fh.write("\n")

    def load_assignment(self, path) -> "DatasetStore":
        with open(path, encoding="utf-8") as fh:
            self.assignment = json.load(fh)
        return self


def split(store: DatasetStore, val_fraction: float = 0.1,
          holdout_workloads: Iterable[str] = (), seed: int = 0) -> DatasetStore:
    """Assign every subgraph to train/val/test.

    Any subgraph appearing in a holdout workload goes to test; the rest are
    shuffled with a seeded RNG and split train:val at subgraph granularity.
    """
    holdout = tuple(holdout_workloads)
    hold = set(holdout)
    test = {r.subgraph_id for r in store.records if r.workload in hold}
    rest = sorted({r.subgraph_id for r in store.records} - test)
    order = np.random.default_rng(seed).permutation(len(rest))
    n_val = int(round(len(rest) * val_fraction))
    assignment = {sg: "test" for sg in test}
    for rank, k in enumerate(order):
        assignment[rest[k]] = "val" if rank < n_val else "train"
    return DatasetStore(list(store.records), assignment, holdout, dict(store.weights))


def _feature_key(record: TensorProgramRecord, cfg: FeatureConfig, tt: TokenTable) -> bytes:
    return extract_features(record.sequence, cfg, tt).tobytes()


@dataclass
class DuplicateReport:
    total: int
    distinct: int

    @property
    def rate(self) -> float:
        return (self.total - self.distinct) / self.total


def duplicate_rate(store: DatasetStore, cfg: FeatureConfig, tt: TokenTable,
                   scope: str = "hardware") -> DuplicateReport:
    """Repetition rate ``(total - distinct) / total`` over extracted feature matrices.

    ``scope`` chooses where two equal matrices count as a repeat: within the
    same hardware (``"hardware"``), the same (hardware, subgraph) group
    (``"group"``), or anywhere (``"global"``).
    """
    if not store.records:
        raise ValidationError("duplicate rate of an empty store is undefined")
    seen = set()
    for r in store.records:
        if scope == "hardware":
            prefix = (r.hardware_id,)
        elif scope == "group":
            prefix = (r.hardware_id, r.subgraph_id)
        elif scope == "global":
            prefix = ()
        else:
            raise ValueError(f"unknown scope {scope!r}")
        seen.add(prefix + (_feature_key(r, cfg, tt),))
    return DuplicateReport(len(store.records), len(seen))


def dedup_labels(store: DatasetStore, cfg: FeatureConfig, tt: TokenTable) -> DatasetStore:
    """Collapse equal feature matrices within a (hardware, subgraph) group.

    The survivor is the fastest duplicate, so it carries the maximum label;
    the group minimum (and therefore every other label) is unchanged.
    """
    best: dict[tuple, int] = {}
    order = []
    for i, r in enumerate(store.records):
        key = (r.hardware_id, r.subgraph_id, _feature_key(r, cfg, tt))
        j = best.get(key)
        if j is None:
            best[key] = i
            order.append(key)
        elif r.latency < store.records[j].latency:
            best[key] = i
    keep = sorted(best[k] for k in order)
    return DatasetStore([store.records[i] for i in keep], dict(store.assignment),
                        store.holdout_workloads, dict(store.weights))


@dataclass
class StatsReport:
    record_count: int
    length_histogram: dict[int, int]
    max_embedding: dict[str, int]
    records_per_hardware: dict[str, int]
    subgraph_count: int
    duplicate_rate: float | None = None
    distinct: int | None = None

    def write_csv(self, length_path, type_path) -> None:
        with open(length_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["length", "count"])
            for k in sorted(self.length_histogram):
                w.writerow([k, self.length_histogram[k]])
        with open(type_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["type", "max_embedding"])
            for t, v in self.max_embedding.items():
                w.writerow([t, v])

    def to_json(self) -> dict:
        return {
            "record_count": self.record_count,
            "subgraph_count": self.subgraph_count,
            "records_per_hardware": self.records_per_hardware,
            "length_histogram": {str(k): v for k, v in sorted(self.length_histogram.items())},
            "max_embedding": self.max_embedding,
            "duplicate_rate": self.duplicate_rate,
            "distinct": self.distinct,
        }


def stats(store: DatasetStore, cfg: FeatureConfig,
          registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY) -> StatsReport:
    """Sequence-length histogram and per-type maximum embedding size.

    A type's embedding size is ``num_types`` (its one-hot block) plus the
    largest argument count observed for it; unseen types are omitted.
    """
    lengths = Counter(len(r.sequence) for r in store.records)
    max_args: dict[int, int] = {}
    for r in store.records:
        for p in r.sequence:
            max_args[p.type_id] = max(max_args.get(p.type_id, 0), len(p.args))
    max_emb = {registry.name(t): cfg.num_types + n for t, n in sorted(max_args.items())}
    per_hw = Counter(r.hardware_id for r in store.records)
    return StatsReport(len(store.records), dict(sorted(lengths.items())), max_emb,
                       dict(sorted(per_hw.items())), len(store.subgraph_ids))


def featurize_store(store: DatasetStore, featurizer: Featurizer) -> np.ndarray:
    return featurizer.transform([r.sequence for r in store.records])
