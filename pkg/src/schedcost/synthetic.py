"""Synthetic subgraphs, a seeded latency oracle and corpus generation.

A :class:`SyntheticSubgraph` is a template: a fixed list of primitive steps
whose argument slots each range over a small domain.  A concrete schedule is
a *genotype*, one choice index per variable slot.

The oracle is log-linear with pairwise interactions over per-(type, slot)
aggregates of the numeric arguments::

    latency = base * exp(scale * (w . g + g' U g)) * noise

where ``g[t, j]`` sums ``log2(1 + |v|) / 10`` over the j-th numeric argument
of every primitive of type t.  The weights depend only on the oracle seed,
so one oracle is a consistent "hardware" across all subgraphs.
"""

from __future__ import annotations

import itertools
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .primitives import (
    DEFAULT_REGISTRY, Primitive, PrimitiveSequence, PrimitiveTypeRegistry, TensorProgramRecord,
)

POW2 = tuple(float(2 ** i) for i in range(7))  # 1 .. 64
MAX_SLOTS = 8
ORACLE_VERSION = 1


@dataclass(frozen=True)
class ArgSlot:
    kind: str  # "num" or "name"
    choices: tuple

    @property
    def variable(self) -> bool:
        return len(self.choices) > 1


@dataclass(frozen=True)
class TemplateStep:
    type_name: str
    args: tuple[ArgSlot, ...] = ()


@dataclass
class SyntheticSubgraph:
    id: str
    template: tuple[TemplateStep, ...]
    oracle_seed: int = 0
    workload: str = "synthetic"
    weight: int = 1
    registry: PrimitiveTypeRegistry = field(default=DEFAULT_REGISTRY, repr=False)

    def __post_init__(self):
        self.template = tuple(self.template)
        # (step, arg) of every slot with more than one choice, in template order
        self.slots = [(i, j) for i, st in enumerate(self.template)
                      for j, a in enumerate(st.args) if a.variable]
        self.domain_sizes = np.array([len(self.template[i].args[j].choices) for i, j in self.slots],
                                     dtype=np.int64)
        self.slot_step = np.array([i for i, _ in self.slots], dtype=np.int64)
        self._type_ids = [self.registry.index(st.type_name) for st in self.template]

    @property
    def space_size(self) -> int:
        return int(np.prod(self.domain_sizes)) if len(self.slots) else 1

    def sequence(self, genotype: Sequence[int]) -> PrimitiveSequence:
        it = iter(genotype)
        prims = []
        for st, tid in zip(self.template, self._type_ids):
            args = []
            for a in st.args:
                c = a.choices[next(it)] if a.variable else a.choices[0]
                args.append(c if a.kind == "name" else float(c))
            prims.append(Primitive(tid, tuple(args)))
        return tuple(prims)

    def genotype_of(self, seq: PrimitiveSequence) -> tuple[int, ...]:
        """Choice indices of ``seq``; raises if it is not an instance of the template."""
        if len(seq) != len(self.template):
            raise ValidationError(f"sequence has {len(seq)} steps, template {self.id} has "
                                  f"{len(self.template)}")
        geno = []
        for p, st, tid in zip(seq, self.template, self._type_ids):
            if p.type_id != tid or len(p.args) != len(st.args):
                raise ValidationError(f"sequence does not match template {self.id}")
            for v, a in zip(p.args, st.args):
                want = v if a.kind == "name" else float(v)
                opts = a.choices if a.kind == "name" else tuple(float(c) for c in a.choices)
                if isinstance(v, str) != (a.kind == "name") or want not in opts:
                    raise ValidationError(f"argument {v!r} outside the domain of template {self.id}")
                if a.variable:
                    geno.append(opts.index(want))
        return tuple(geno)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` uniform genotypes (with replacement), shape ``(n, slots)``."""
        if not len(self.slots):
            return np.zeros((n, 0), dtype=np.int64)
        return (rng.random((n, len(self.slots))) * self.domain_sizes).astype(np.int64)

    def enumerate(self, limit: int = 1_000_000) -> np.ndarray:
        if self.space_size > limit:
            raise ValidationError(f"subgraph {self.id}: space of {self.space_size} points "
                                  f"exceeds the enumeration limit {limit}")
        return np.array(list(itertools.product(*[range(d) for d in self.domain_sizes])),
                        dtype=np.int64).reshape(-1, len(self.slots))

    def to_dict(self) -> dict:
        return {
            "id": self.id, "workload": self.workload, "weight": self.weight,
            "oracle_seed": self.oracle_seed,
            "template": [{"t": st.type_name,
                          "args": [{"kind": a.kind, "choices": list(a.choices)} for a in st.args]}
                         for st in self.template],
        }

    @classmethod
    def from_dict(cls, d: dict, registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY):
        template = tuple(
            TemplateStep(st["t"], tuple(ArgSlot(a["kind"], tuple(a["choices"])) for a in st["args"]))
            for st in d["template"])
        return cls(d["id"], template, d.get("oracle_seed", 0), d.get("workload", "synthetic"),
                   d.get("weight", 1), registry)


def _mix(*parts) -> int:
    """Deterministic 32-bit seed from arbitrary string/int parts."""
    return zlib.crc32("/".join(str(p) for p in parts).encode())


class SyntheticOracle:
    """Deterministic latency function standing in for hardware measurement."""

    def __init__(self, seed: int = 0, sigma: float = 0.0, scale: float = 1.0,
                 pair_scale: float = 0.25, num_types: int = len(DEFAULT_REGISTRY),
                 linear: np.ndarray | None = None, pairwise: np.ndarray | None = None):
        self.seed = seed
        self.sigma = sigma
        self.scale = scale
        self.num_types = num_types
        dim = num_types * MAX_SLOTS
        rng = np.random.default_rng(_mix("oracle", seed))
        self.linear = rng.normal(size=dim) if linear is None else np.asarray(linear, dtype=np.float64)
        if pairwise is None:
            pairwise = np.triu(rng.normal(size=(dim, dim))) * pair_scale
        self.pairwise = np.asarray(pairwise, dtype=np.float64)
        self.pair_scale = pair_scale
        self.origin: dict | None = None  # set for oracles derived by correlated()
        self._noise = np.random.default_rng(_mix("noise", seed))

    def correlated(self, seed: int, rho: float) -> "SyntheticOracle":
        """A second oracle whose weights have correlation ``rho`` with this one."""
        other = SyntheticOracle(seed, self.sigma, self.scale, self.pair_scale, self.num_types)
        a, b = rho, math.sqrt(max(0.0, 1.0 - rho * rho))
        twin = SyntheticOracle(seed, self.sigma, self.scale, self.pair_scale, self.num_types,
                               linear=a * self.linear + b * other.linear,
                               pairwise=a * self.pairwise + b * other.pairwise)
        twin.origin = {"base": self.to_dict(), "rho": rho}
        return twin

    def base_latency(self, subgraph: SyntheticSubgraph) -> float:
        u = np.random.default_rng(_mix("base", self.seed, subgraph.oracle_seed, subgraph.id)).random()
        return float(math.exp(math.log(1e-4) + u * (math.log(1e-2) - math.log(1e-4))))

    def features(self, seq: PrimitiveSequence) -> np.ndarray:
        g = np.zeros(self.num_types * MAX_SLOTS)
        for p in seq:
            j = 0
            for a in p.args:
                if isinstance(a, str):
                    continue
                if j < MAX_SLOTS:
                    g[p.type_id * MAX_SLOTS + j] += math.log2(1.0 + abs(a)) / 10.0
                j += 1
        return g

    def log_factor(self, seq: PrimitiveSequence) -> float:
        g = self.features(seq)
        nz = np.flatnonzero(g)
        gz = g[nz]
        return float(self.linear[nz] @ gz + gz @ self.pairwise[np.ix_(nz, nz)] @ gz)

    def latency(self, subgraph: SyntheticSubgraph, seq: PrimitiveSequence) -> float:
        subgraph.genotype_of(seq)  # validates template membership
        lat = self.base_latency(subgraph) * math.exp(self.scale * self.log_factor(seq))
        if self.sigma > 0:
            lat *= math.exp(self.sigma * self._noise.standard_normal())
        return lat

    def to_dict(self) -> dict:
        d = {"version": ORACLE_VERSION, "seed": self.seed, "sigma": self.sigma,
             "scale": self.scale, "pair_scale": self.pair_scale, "num_types": self.num_types}
        if self.origin is not None:
            d["correlated_with"] = self.origin
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticOracle":
        if d.get("version", ORACLE_VERSION) != ORACLE_VERSION:
            raise ValidationError(f"unsupported oracle version {d.get('version')}")
        if "correlated_with" in d:
            o = d["correlated_with"]
            return cls.from_dict(o["base"]).correlated(d["seed"], o["rho"])
        return cls(d["seed"], d.get("sigma", 0.0), d.get("scale", 1.0), d.get("pair_scale", 0.25),
                   d.get("num_types", len(DEFAULT_REGISTRY)))


def oracle_latency(oracle: SyntheticOracle, subgraph: SyntheticSubgraph,
                   seq: PrimitiveSequence) -> float:
    return oracle.latency(subgraph, seq)


def brute_force_optimum(oracle: SyntheticOracle, subgraph: SyntheticSubgraph):
    """(best latency, best genotype, all latencies) by exhaustive enumeration."""
    genos = subgraph.enumerate()
    lats = np.array([oracle.latency(subgraph, subgraph.sequence(g)) for g in genos])
    k = int(np.argmin(lats))
    return float(lats[k]), tuple(int(v) for v in genos[k]), lats


LOOP_NAMES = ("i", "j", "k", "b", "c", "h", "w", "r")


def random_template(rng: np.random.Generator, max_space: int | None = None,
                    steps: tuple[int, int] = (4, 9), domain: tuple = POW2) -> tuple[TemplateStep, ...]:
    """A plausible loop-schedule template.

    Splits carry variable tile factors, pragmas a variable unroll depth,
    the other steps fixed arguments.  ``max_space`` caps the number of
    distinct schedules (variable slots are frozen once the cap is reached).
    """
    n_steps = int(rng.integers(steps[0], steps[1] + 1))
    loops = list(rng.choice(LOOP_NAMES, size=3, replace=False))
    space = 1
    out = []

    def var(choices):
        nonlocal space
        if max_space is not None and space * len(choices) > max_space:
            return ArgSlot("num", (choices[int(rng.integers(len(choices)))],))
        space *= len(choices)
        return ArgSlot("num", tuple(choices))

    out.append(TemplateStep("SP", (ArgSlot("name", (loops[0],)),
                                   ArgSlot("num", (float(2 ** int(rng.integers(6, 11))),)),
                                   var(domain), var(domain), var(domain))))
    for _ in range(n_steps - 1):
        kind = rng.choice(["SP", "RE", "FU", "AN", "PR", "CA", "CHW"],
                          p=[0.3, 0.15, 0.15, 0.15, 0.1, 0.1, 0.05])
        lp = loops[int(rng.integers(len(loops)))]
        if kind == "SP":
            k = int(rng.integers(1, 4))
            step = TemplateStep("SP", (ArgSlot("name", (lp,)),
                                       ArgSlot("num", (float(2 ** int(rng.integers(4, 10))),)))
                                + tuple(var(domain) for _ in range(k)))
        elif kind == "RE":
            names = [f"{l}.{t}" for l in loops for t in range(2)]
            rng.shuffle(names)
            step = TemplateStep("RE", tuple(ArgSlot("name", (n,)) for n in names[:4]))
        elif kind == "FU":
            step = TemplateStep("FU", (ArgSlot("name", (f"{lp}.0",)), ArgSlot("name", (f"{lp}.1",))))
        elif kind == "AN":
            step = TemplateStep("AN", (ArgSlot("name", (f"{lp}.0",)), var((0.0, 1.0, 2.0, 3.0))))
        elif kind == "PR":
            step = TemplateStep("PR", (ArgSlot("name", (lp,)), var((0.0, 16.0, 64.0, 512.0))))
        elif kind == "CA":
            step = TemplateStep("CA", (ArgSlot("num", (float(rng.integers(0, 4)),)),
                                       ArgSlot("num", (float(rng.integers(0, 4)),))))
        else:
            step = TemplateStep("CHW", (ArgSlot("num", (0.0,)), ArgSlot("name", ("local",))))
        out.append(step)
    return tuple(out)


def grid_template(values: tuple = (1.0, 2.0, 4.0, 8.0), slots: int = 3) -> tuple[TemplateStep, ...]:
    """A small enumerable template: one split with ``len(values) ** slots`` schedules."""
    return (
        TemplateStep("SP", (ArgSlot("name", ("i",)), ArgSlot("num", (512.0,)))
                     + tuple(ArgSlot("num", tuple(values)) for _ in range(slots))),
        TemplateStep("RE", (ArgSlot("name", ("i.0",)), ArgSlot("name", ("i.1",)))),
        TemplateStep("AN", (ArgSlot("name", ("i.0",)), ArgSlot("num", (1.0,)))),
    )


def make_subgraphs(n: int, seed: int, workload: str = "synthetic", prefix: str = "sg",
                   max_space: int | None = None, weights: bool = False) -> list[SyntheticSubgraph]:
    rng = np.random.default_rng(_mix("subgraphs", seed, workload))
    out = []
    for i in range(n):
        w = int(rng.integers(1, 4)) if weights else 1
        out.append(SyntheticSubgraph(f"{prefix}{i}", random_template(rng, max_space),
                                     oracle_seed=int(rng.integers(2 ** 31)), workload=workload,
                                     weight=w))
    return out


def distinct_genotypes(sub: SyntheticSubgraph, n: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``n`` distinct uniform genotypes (the whole space if it is smaller)."""
    if sub.space_size <= n:
        return sub.enumerate()[rng.permutation(sub.space_size)]
    seen: dict[tuple, None] = {}
    while len(seen) < n:
        for g in sub.sample(rng, 2 * (n - len(seen))):
            seen.setdefault(tuple(int(v) for v in g), None)
            if len(seen) == n:
                break
    return np.array(list(seen), dtype=np.int64).reshape(n, len(sub.slots))


@dataclass
class SyntheticCorpus:
    records: list[TensorProgramRecord]
    subgraphs: list[SyntheticSubgraph]
    oracles: dict[str, SyntheticOracle]

    def workload_spec(self) -> dict:
        return {
            "oracles": {hw: o.to_dict() for hw, o in self.oracles.items()},
            "subgraphs": [s.to_dict() for s in self.subgraphs],
        }

    def write_workload_spec(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.workload_spec(), fh, indent=1)
            fh.write("\n")

    def weights(self) -> dict[tuple[str, str], int]:
        return {(s.workload, s.id): s.weight for s in self.subgraphs}


def generate_corpus(subgraphs: Sequence[SyntheticSubgraph], oracles: dict[str, SyntheticOracle],
                    candidates: int, seed: int = 0) -> SyntheticCorpus:
    """Measure ``candidates`` distinct schedules of every subgraph on every oracle."""
    records = []
    for s in subgraphs:
        rng = np.random.default_rng(_mix("corpus", seed, s.id, s.workload))
        for g in distinct_genotypes(s, candidates, rng):
            seq = s.sequence(g)
            for hw, oracle in oracles.items():
                records.append(TensorProgramRecord(s.id, s.workload, hw, oracle.latency(s, seq), seq))
    return SyntheticCorpus(records, list(subgraphs), dict(oracles))


def load_workload_spec(path, registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY):
    with open(path) as fh:
        spec = json.load(fh)
    subs = [SyntheticSubgraph.from_dict(d, registry) for d in spec["subgraphs"]]
    oracles = {hw: SyntheticOracle.from_dict(d) for hw, d in spec.get("oracles", {}).items()}
    return subs, oracles
