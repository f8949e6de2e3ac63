"""Flat ``section.key = value`` config files mirroring the module configs.

Example::

    # comments start with '#'
    feature.sequence_length = 25
    model.hidden_dim = 256
    model.backbone = self_attention
    train.lr = 0.001
    split.holdout_workloads = net3, net4

Values are parsed as bool (``true``/``false``), int, float, then string.
Tuple-typed fields take comma-separated lists.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import get_type_hints

from .errors import ConfigError
from .features import FeatureConfig
from .model import ModelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class SplitConfig:
    val_fraction: float = 0.1
    holdout_workloads: tuple[str, ...] = ()
    seed: int = 0


@dataclass(frozen=True)
class SearchConfig:
    rounds: int = 200
    measure_per_round: int = 10
    pool_size: int = 512
    evolution_iters: int = 4
    mutation_rate: float = 0.85
    crossover_rate: float = 0.5


@dataclass(frozen=True)
class SyntheticConfig:
    workloads: int = 5
    subgraphs_per_workload: int = 10
    candidates: int = 200
    hardware: tuple[str, ...] = ("hw_a",)
    correlation: float = 0.8
    sigma: float = 0.0
    pair_scale: float = 0.25
    max_space: int = 0  # 0 = unbounded


SECTIONS = {
    "feature": FeatureConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "split": SplitConfig,
    "search": SearchConfig,
    "synthetic": SyntheticConfig,
}


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(t)
        except ValueError:
            pass
    return t


def parse_config_text(text: str) -> dict[str, str]:
    """Raw ``{dotted key: value text}``; later lines override earlier ones."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key.count(".") != 1 or key.split(".")[0] not in SECTIONS:
            raise ConfigError(f"config line {n}: unknown key {key!r}; sections are {sorted(SECTIONS)}")
        out[key] = value.strip()
    return out


def load_config_file(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _coerce(cls, name: str, raw):
    hint = get_type_hints(cls)[name]
    if not isinstance(raw, str):
        return raw
    origin = getattr(hint, "__origin__", None)
    if origin is tuple or "tuple" in str(hint):
        return tuple(parse_value(v) for v in raw.split(",") if v.strip())
    value = parse_value(raw)
    if hint is float and isinstance(value, int):
        value = float(value)
    if hint is str:
        value = raw.strip()
    return value


@dataclass
class RunConfig:
    """Every module config, built from defaults, a config file, then overrides."""

    feature: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    @classmethod
    def build(cls, *layers: dict) -> "RunConfig":
        merged: dict[str, object] = {}
        for layer in layers:
            merged.update({k: v for k, v in layer.items() if v is not None})
        kwargs = {}
        for section, sc in SECTIONS.items():
            names = {f.name for f in fields(sc)}
            vals = {}
            for key, raw in merged.items():
                sec, name = key.split(".", 1)
                if sec != section:
                    continue
                if name not in names:
                    raise ConfigError(f"unknown config key {key!r}")
                vals[name] = _coerce(sc, name, raw)
            try:
                kwargs[section] = sc(**vals)
            except TypeError as exc:
                raise ConfigError(str(exc)) from None
        return cls(**kwargs)

    def to_dict(self) -> dict[str, object]:
        out = {}
        for section in SECTIONS:
            for k, v in dataclasses.asdict(getattr(self, section)).items():
                out[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
        return out

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif v is None:
                continue
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"
