"""Feature extraction from primitive sequences.

Each primitive becomes one row: a one-hot block for its type followed by its
arguments in source order, numbers verbatim and names as integer tokens.
Rows are cropped/zero-padded to a fixed ``sequence_length x embedding_size``
matrix and columns are scaled by their training-set max-abs value.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .primitives import DEFAULT_REGISTRY, Primitive, PrimitiveSequence, PrimitiveTypeRegistry

PAD_TOKEN = 0
UNKNOWN_TOKEN = 1
FIRST_TOKEN = 2


def stable_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class FeatureConfig:
    num_types: int = len(DEFAULT_REGISTRY)
    sequence_length: int = 25
    embedding_size: int = 22

    def __post_init__(self):
        if self.sequence_length < 1:
            raise ConfigError("sequence_length must be >= 1")
        if self.embedding_size <= self.num_types:
            raise ConfigError(
                f"embedding_size ({self.embedding_size}) must exceed num_types ({self.num_types})")

    @property
    def arg_slots(self) -> int:
        return self.embedding_size - self.num_types

    @property
    def shape(self) -> tuple[int, int]:
        return (self.sequence_length, self.embedding_size)

    def digest(self) -> str:
        return stable_hash(asdict(self))


@dataclass
class TokenTable:
    """Name -> token map; 0 is padding, 1 is unknown, real names start at 2."""

    tokens: dict[str, int] = field(default_factory=dict)
    frozen: bool = False

    def add(self, name: str) -> int:
        tok = self.tokens.get(name)
        if tok is None:
            if self.frozen:
                return UNKNOWN_TOKEN
            tok = FIRST_TOKEN + len(self.tokens)
            self.tokens[name] = tok
        return tok

    def lookup(self, name: str) -> int:
        return self.tokens.get(name, UNKNOWN_TOKEN)

    def freeze(self) -> "TokenTable":
        self.frozen = True
        return self

    def inverse(self) -> dict[int, str]:
        return {t: n for n, t in self.tokens.items()}

    def __len__(self) -> int:
        return len(self.tokens)

    def digest(self) -> str:
        return stable_hash(sorted(self.tokens.items(), key=lambda kv: kv[1]))

    def to_dict(self) -> dict:
        return dict(self.tokens)

    @classmethod
    def from_dict(cls, d: dict) -> "TokenTable":
        return cls(dict(d), frozen=True)


def build_token_table(sequences: Iterable[PrimitiveSequence]) -> TokenTable:
    """Assign tokens 2, 3, ... to names in first-occurrence order, then freeze."""
    table = TokenTable()
    for seq in sequences:
        for p in seq:
            for a in p.args:
                if isinstance(a, str):
                    table.add(a)
    return table.freeze()


@dataclass
class CropStats:
    """Counts of information dropped by cropping."""

    cropped_args: int = 0
    cropped_primitives: int = 0


def embed_primitive(p: Primitive, cfg: FeatureConfig, tt: TokenTable,
                    stats: CropStats | None = None) -> np.ndarray:
    if not 0 <= p.type_id < cfg.num_types:
        raise ValidationError(f"type id {p.type_id} outside registry of {cfg.num_types}")
    row = np.zeros(cfg.embedding_size, dtype=np.float64)
    row[p.type_id] = 1.0
    slots = cfg.arg_slots
    for j, a in enumerate(p.args[:slots]):
        row[cfg.num_types + j] = tt.lookup(a) if isinstance(a, str) else a
    if stats is not None and len(p.args) > slots:
        stats.cropped_args += len(p.args) - slots
    return row


def extract_features(seq: PrimitiveSequence, cfg: FeatureConfig, tt: TokenTable,
                     stats: CropStats | None = None) -> np.ndarray:
    """Raw (unnormalized) feature matrix of shape ``cfg.shape``."""
    if len(seq) == 0:
        raise ValidationError("cannot featurize an empty primitive sequence")
    out = np.zeros(cfg.shape, dtype=np.float64)
    for i, p in enumerate(seq[:cfg.sequence_length]):
        out[i] = embed_primitive(p, cfg, tt, stats)
    if stats is not None and len(seq) > cfg.sequence_length:
        stats.cropped_primitives += len(seq) - cfg.sequence_length
    return out


def decode_features(matrix: np.ndarray, cfg: FeatureConfig, tt: TokenTable,
                    kinds: Sequence[Sequence[str]]) -> list[tuple[int, tuple]]:
    """Invert a raw feature matrix back into ``(type_id, args)`` pairs.

    ``kinds[i]`` lists the argument kinds (``"num"`` or ``"name"``) of row i,
    which a search framework knows from each primitive's signature.  A row
    that is all zero is padding and ends the sequence.
    """
    inv = tt.inverse()
    out = []
    for i, row in enumerate(matrix):
        if not row.any():
            break
        onehot = row[:cfg.num_types]
        type_id = int(np.argmax(onehot))
        args = []
        for j, kind in enumerate(kinds[i]):
            v = row[cfg.num_types + j]
            args.append(inv[int(v)] if kind == "name" else float(v))
        out.append((type_id, tuple(args)))
    return out


@dataclass
class NormalizationStats:
    scales: np.ndarray

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=np.float64)
        if np.any(self.scales <= 0):
            raise ConfigError("normalization scales must be positive")

    def to_list(self) -> list[float]:
        return [float(s) for s in self.scales]


def fit_normalization(matrices: Iterable[np.ndarray]) -> NormalizationStats:
    """Per-column max-abs over every row of every matrix (1.0 for zero columns)."""
    col_max = None
    for m in matrices:
        m = np.asarray(m)
        cur = np.abs(m.reshape(-1, m.shape[-1])).max(axis=0)
        col_max = cur if col_max is None else np.maximum(col_max, cur)
    if col_max is None:
        raise ValidationError("cannot fit normalization on an empty stream")
    return NormalizationStats(np.where(col_max > 0, col_max, 1.0))


def apply_normalization(m: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    if m.shape[-1] != stats.scales.shape[0]:
        raise ConfigError(
            f"normalization has {stats.scales.shape[0]} columns, features have {m.shape[-1]}")
    return m / stats.scales


class Featurizer:
    """Registry, feature shape, token table and normalization bundled together.

    This is the unit persisted with a checkpoint: a model is only meaningful
    for inputs featurized by exactly the same bundle.
    """

    def __init__(self, registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY,
                 config: FeatureConfig | None = None, tokens: TokenTable | None = None,
                 normalization: NormalizationStats | None = None):
        self.registry = registry
        self.config = config or FeatureConfig(num_types=len(registry))
        if self.config.num_types != len(registry):
            raise ConfigError(f"config expects {self.config.num_types} types, "
                              f"registry has {len(registry)}")
        self.tokens = tokens or TokenTable(frozen=True)
        self.normalization = normalization
        self.crop_stats = CropStats()

    def fit(self, train_sequences: Sequence[PrimitiveSequence]) -> "Featurizer":
        self.tokens = build_token_table(train_sequences)
        self.normalization = fit_normalization(self.raw(train_sequences))
        return self

    def raw(self, sequences: Sequence[PrimitiveSequence]) -> np.ndarray:
        out = np.zeros((len(sequences),) + self.config.shape, dtype=np.float64)
        for n, seq in enumerate(sequences):
            out[n] = extract_features(seq, self.config, self.tokens, self.crop_stats)
        return out

    def transform(self, sequences: Sequence[PrimitiveSequence],
                  dtype=np.float32) -> np.ndarray:
        if self.normalization is None:
            raise ConfigError("featurizer has no normalization stats; call fit() first")
        return apply_normalization(self.raw(sequences), self.normalization).astype(dtype)

    def digest(self) -> str:
        return stable_hash({
            "registry": list(self.registry.names),
            "config": asdict(self.config),
            "tokens": self.tokens.digest(),
            "scales": None if self.normalization is None else self.normalization.to_list(),
        })

    def to_dict(self) -> dict:
        return {
            "registry": list(self.registry.names),
            "config": asdict(self.config),
            "tokens": self.tokens.to_dict(),
            "scales": None if self.normalization is None else self.normalization.to_list(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Featurizer":
        norm = None if d["scales"] is None else NormalizationStats(np.array(d["scales"]))
        return cls(PrimitiveTypeRegistry(tuple(d["registry"])), FeatureConfig(**d["config"]),
                   TokenTable.from_dict(d["tokens"]), norm)
