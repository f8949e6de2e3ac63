"""Round-based evolutionary tuning against a synthetic oracle.

Each round picks one subgraph (round-robin), builds a candidate pool of
fresh template samples, refines it for a few generations of cost-model
guided evolution, and measures the best-ranked candidates that were never
measured before.  Every subgraph draws from its own random stream, so a
subgraph's search does not depend on what else is in the workload.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ValidationError
from .model import CostModel
from .primitives import PrimitiveSequence
from .synthetic import SyntheticOracle, SyntheticSubgraph, distinct_genotypes


class Scorer(Protocol):
    def score(self, subgraph: SyntheticSubgraph, genotypes: np.ndarray) -> np.ndarray: ...


class RandomScorer:
    """Independent uniform scores: turns the tuner into random search."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def score(self, subgraph, genotypes):
        return self.rng.random(len(genotypes))


class OracleScorer:
    """Scores by true (noise-free) latency; an upper bound on any cost model."""

    def __init__(self, oracle: SyntheticOracle):
        self.oracle = oracle

    def score(self, subgraph, genotypes):
        return np.array([-self.oracle.log_factor(subgraph.sequence(g)) for g in genotypes])


class ModelScorer:
    """Scores candidates with a cost model, featurizing straight from genotypes.

    The template's fixed arguments are featurized once; per candidate only
    the variable slots are written.  Result equals
    ``model.predict([subgraph.sequence(g) ...])``.
    """

    def __init__(self, model: CostModel, task=0):
        self.model = model
        self.task = task
        self._templates: dict[str, tuple] = {}

    def _template(self, sub: SyntheticSubgraph):
        hit = self._templates.get(sub.id)
        if hit is not None:
            return hit
        fz = self.model.featurizer
        cfg = fz.config
        base = fz.raw([sub.sequence(np.zeros(len(sub.slots), dtype=np.int64))])[0]
        cols = []
        for s, (i, j) in enumerate(sub.slots):
            if i >= cfg.sequence_length or j >= cfg.arg_slots:
                continue  # cropped away: invisible to the model
            a = sub.template[i].args[j]
            values = np.array([fz.tokens.lookup(c) if a.kind == "name" else float(c)
                               for c in a.choices])
            cols.append((s, i, cfg.num_types + j, values))
        hit = (base, cols)
        self._templates[sub.id] = hit
        return hit

    def features(self, sub: SyntheticSubgraph, genotypes: np.ndarray) -> np.ndarray:
        base, cols = self._template(sub)
        X = np.repeat(base[None], len(genotypes), axis=0)
        for s, i, c, values in cols:
            X[:, i, c] = values[genotypes[:, s]]
        return (X / self.model.featurizer.normalization.scales).astype(self.model.dtype)

    def score(self, subgraph, genotypes):
        if len(genotypes) == 0:
            return np.zeros(0)
        return self.model.forward(self.features(subgraph, genotypes), self.task).astype(np.float64)


def as_scorer(cost_model) -> Scorer:
    if isinstance(cost_model, CostModel):
        return ModelScorer(cost_model)
    if not hasattr(cost_model, "score"):
        raise TypeError("cost model must be a CostModel or expose score(subgraph, genotypes)")
    return cost_model


def generate_initial(subgraph: SyntheticSubgraph, n: int, rng: np.random.Generator) -> list[PrimitiveSequence]:
    """``n`` distinct template samples (fewer only if the space is smaller)."""
    if n <= 0:
        return []
    return [subgraph.sequence(g) for g in distinct_genotypes(subgraph, n, rng)]


def _selection_weights(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    spread = s.max() - s.min()
    w = s - s.min() + (1e-3 * spread if spread > 0 else 1.0)
    return w / w.sum()


def evolve(subgraph: SyntheticSubgraph, population: np.ndarray, scores: np.ndarray,
           rng: np.random.Generator, n_offspring: int | None = None,
           mutation_rate: float = 0.85, crossover_rate: float = 0.5) -> np.ndarray:
    """Offspring genotypes by fitness-proportional selection, crossover and mutation.

    Crossover cuts between primitives: the child copies one parent's slots
    for steps before the cut and the other's after.  Mutation moves one
    numeric slot a single step along its domain and stays put when the step
    would leave it.
    """
    population = np.asarray(population, dtype=np.int64)
    n = len(population) if n_offspring is None else n_offspring
    if n == 0 or len(population) == 0:
        return np.zeros((0, len(subgraph.slots)), dtype=np.int64)
    p = _selection_weights(scores)
    a = population[rng.choice(len(population), size=n, p=p)]
    b = population[rng.choice(len(population), size=n, p=p)]
    child = a.copy()
    n_steps = len(subgraph.template)
    if n_steps > 1 and crossover_rate > 0 and len(subgraph.slots):
        do = rng.random(n) < crossover_rate
        cut = rng.integers(1, n_steps, size=n)
        take_b = do[:, None] & (subgraph.slot_step[None, :] >= cut[:, None])
        child = np.where(take_b, b, child)
    if mutation_rate > 0 and len(subgraph.slots):
        do = rng.random(n) < mutation_rate
        slot = rng.integers(0, len(subgraph.slots), size=n)
        step = np.where(rng.random(n) < 0.5, -1, 1)
        rows = np.flatnonzero(do)
        moved = child[rows, slot[rows]] + step[rows]
        ok = (moved >= 0) & (moved < subgraph.domain_sizes[slot[rows]])
        child[rows[ok], slot[rows[ok]]] = moved[ok]
    return child


@dataclass
class TuningTrajectory:
    """Per-round record of a tuning run plus the full measurement log."""

    subgraphs: list[str]
    weights: dict[str, int]
    rows: list[dict] = field(default_factory=list)
    log: list[tuple[str, float]] = field(default_factory=list)  # (subgraph, latency) per measurement
    best: dict[str, float] = field(default_factory=dict)
    best_genotype: dict[str, tuple] = field(default_factory=dict)

    @property
    def rounds(self) -> int:
        return len(self.rows)

    @property
    def measurements(self) -> int:
        return len(self.log)

    def workload_latency(self, best: dict[str, float]) -> float:
        if len(best) < len(self.subgraphs):
            return math.inf
        return float(sum(self.weights[s] * best[s] for s in self.subgraphs))

    @property
    def best_latency(self) -> float:
        return self.workload_latency(self.best)

    def curve(self) -> np.ndarray:
        """Workload best-so-far latency after each measurement."""
        best: dict[str, float] = {}
        out = np.empty(len(self.log))
        for n, (s, lat) in enumerate(self.log):
            best[s] = min(lat, best.get(s, math.inf))
            out[n] = self.workload_latency(best)
        return out

    def measurements_to(self, target: float, subgraph: str | None = None) -> float:
        """Measurements spent until the best falls to ``target`` (inf if never).

        With ``subgraph`` set, only that subgraph's measurements are counted.
        """
        if subgraph is None:
            hits = np.flatnonzero(self.curve() <= target)
            return float(hits[0] + 1) if len(hits) else math.inf
        n = 0
        for s, lat in self.log:
            if s == subgraph:
                n += 1
                if lat <= target:
                    return float(n)
        return math.inf

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "measurements", "best_latency"])
            for r in self.rows:
                w.writerow([r["round"], r["measurements"], repr(r["best_latency"])])


class _Countdown:
    """Oracle wrapper that counts calls."""

    def __init__(self, oracle: SyntheticOracle):
        self.oracle = oracle
        self.calls = 0

    def __call__(self, sub, seq) -> float:
        self.calls += 1
        return self.oracle.latency(sub, seq)


def _round_candidates(sub, scorer, rng, pool_size, evolution_iters, mutation_rate, crossover_rate):
    """All candidates seen this round, best score first (stable by first appearance)."""
    seen: dict[tuple, float] = {}

    def add(genos):
        new = {}
        for g in genos:
            k = tuple(int(v) for v in g)
            if k not in seen:
                new.setdefault(k, None)
        if new:
            keys = list(new)
            arr = np.array(keys, dtype=np.int64).reshape(len(keys), len(sub.slots))
            for k, s in zip(keys, scorer.score(sub, arr)):
                seen[k] = float(s)

    pop = distinct_genotypes(sub, pool_size, rng)
    add(pop)
    for _ in range(evolution_iters):
        pop_scores = np.array([seen[tuple(int(v) for v in g)] for g in pop])
        kids = evolve(sub, pop, pop_scores, rng, pool_size, mutation_rate, crossover_rate)
        add(kids)
        union = {tuple(int(v) for v in g): None for g in np.concatenate([pop, kids])}
        keys = list(union)
        sc = np.array([seen[k] for k in keys])
        order = np.argsort(-sc, kind="stable")[:pool_size]
        pop = np.array([keys[i] for i in order], dtype=np.int64).reshape(-1, len(sub.slots))
    keys = list(seen)
    sc = np.array([seen[k] for k in keys])
    return [keys[i] for i in np.argsort(-sc, kind="stable")]


def _unmeasured_fill(sub, measured, picked, need, rng):
    """Uniformly random unmeasured genotypes when the ranked pool ran dry."""
    taken = set(measured) | set(picked)
    remaining = sub.space_size - len(taken)
    if remaining <= 0:
        return []
    if remaining <= 4096:
        pool = [tuple(int(v) for v in g) for g in sub.enumerate()]
        pool = [g for g in pool if g not in taken]
        idx = rng.permutation(len(pool))[:need]
        return [pool[i] for i in idx]
    out = []
    while len(out) < need:
        k = tuple(int(v) for v in sub.sample(rng, 1)[0])
        if k not in taken:
            taken.add(k)
            out.append(k)
    return out


def tune(workload: Sequence[SyntheticSubgraph], cost_model, oracle: SyntheticOracle,
         rounds: int = 200, measure_per_round: int = 10, seed: int = 0,
         pool_size: int = 512, evolution_iters: int = 4, mutation_rate: float = 0.85,
         crossover_rate: float = 0.5, target: float | None = None) -> TuningTrajectory:
    """Simulated tuning run; returns the trajectory.

    Stops early once the workload best reaches ``target`` (if given); the
    per-round budget is spent in full otherwise, unless a subgraph's whole
    space has already been measured.
    """
    workload = list(workload)
    scorer = as_scorer(cost_model)
    ids = [s.id for s in workload]
    if len(set(ids)) != len(ids):
        raise ValidationError("subgraph ids in a workload must be unique")
    traj = TuningTrajectory(ids, {s.id: s.weight for s in workload})
    if not workload:
        return traj
    measure = _Countdown(oracle)
    rngs = [np.random.default_rng([seed, i]) for i in range(len(workload))]
    measured: list[dict[tuple, float]] = [{} for _ in workload]
    for r in range(rounds):
        i = r % len(workload)
        sub, rng = workload[i], rngs[i]
        ranked = _round_candidates(sub, scorer, rng, pool_size, evolution_iters,
                                   mutation_rate, crossover_rate)
        picked = [k for k in ranked if k not in measured[i]][:measure_per_round]
        if len(picked) < measure_per_round:
            picked += _unmeasured_fill(sub, measured[i], picked, measure_per_round - len(picked), rng)
        for k in picked:
            lat = measure(sub, sub.sequence(k))
            measured[i][k] = lat
            traj.log.append((sub.id, lat))
            if lat < traj.best.get(sub.id, math.inf):
                traj.best[sub.id] = lat
                traj.best_genotype[sub.id] = k
        traj.rows.append({"round": r, "subgraph": sub.id, "measurements": measure.calls,
                          "best_latency": traj.best_latency})
        if target is not None and traj.best_latency <= target:
            break
    assert measure.calls == len(traj.log)
    return traj


@dataclass(frozen=True)
class Speedup:
    ratio: float
    a_reached: bool
    b_reached: bool


def search_speedup(traj_a: TuningTrajectory, traj_b: TuningTrajectory, target: float) -> Speedup:
    """Measurements B needs to reach ``target`` divided by those A needs.

    A missing arrival is an infinite count, flagged in the result.
    """
    na, nb = traj_a.measurements_to(target), traj_b.measurements_to(target)
    if math.isinf(na) and math.isinf(nb):
        raise ValidationError(f"neither trajectory reaches target latency {target}")
    if math.isinf(na):
        return Speedup(0.0, False, True)
    if math.isinf(nb):
        return Speedup(math.inf, True, False)
    return Speedup(nb / na, True, True)


def random_search_expected(latencies: np.ndarray, target: float) -> float:
    """Expected draws without replacement until a latency <= target: (N+1)/(K+1)."""
    lat = np.asarray(latencies)
    k = int(np.count_nonzero(lat <= target))
    if k == 0:
        return math.inf
    return (len(lat) + 1) / (k + 1)
