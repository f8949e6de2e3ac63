"""Abstract schedule primitives and the JSONL record format.

A schedule-primitive sequence is an ordered list of primitives; each primitive
is a type tag followed by ordered arguments that are either numbers or
identifier names.  Numbers are held as Python floats and names as Python
strings, so ``Primitive.args`` is simply a tuple of ``float | str``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

from .errors import RecordParseError, RegistryError, ValidationError

Arg = Union[float, str]

DEFAULT_TYPE_NAMES = (
    "SP", "RE", "FU", "FSP", "CA", "AN", "RF",
    "PR", "CHW", "CR", "CI", "PRG", "UN", "TS",
)


@dataclass(frozen=True)
class PrimitiveTypeRegistry:
    """Ordered, immutable set of primitive type mnemonics.

    The order fixes the one-hot layout of the features, so a registry must
    not change once a model has been trained against it.
    """

    names: tuple[str, ...] = DEFAULT_TYPE_NAMES

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise RegistryError(f"duplicate primitive type names in {names!r}")
        if not names:
            raise RegistryError("registry must contain at least one type")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise RegistryError(f"unknown primitive type {name!r}") from None

    def name(self, type_id: int) -> str:
        return self.names[type_id]


DEFAULT_REGISTRY = PrimitiveTypeRegistry()


@dataclass(frozen=True)
class Primitive:
    type_id: int
    args: tuple[Arg, ...] = ()

    def numeric_args(self) -> list[float]:
        return [a for a in self.args if not isinstance(a, str)]


PrimitiveSequence = tuple[Primitive, ...]


@dataclass(frozen=True)
class TensorProgramRecord:
    subgraph_id: str
    workload: str
    hardware_id: str
    latency: float
    sequence: PrimitiveSequence = ()

    def __post_init__(self):
        if not self.subgraph_id:
            raise ValidationError("subgraph_id must be nonempty")
        if not (isinstance(self.latency, (int, float)) and math.isfinite(self.latency)
                and self.latency > 0):
            raise ValidationError(f"latency must be a positive finite number, got {self.latency!r}")
        object.__setattr__(self, "sequence", tuple(self.sequence))


def make_sequence(items: Iterable[tuple[str, Sequence[Arg]]],
                  registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY) -> PrimitiveSequence:
    """Build a sequence from ``(mnemonic, args)`` pairs."""
    return tuple(
        Primitive(registry.index(t), tuple(a if isinstance(a, str) else float(a) for a in args))
        for t, args in items
    )


def _parse_arg(raw, line_number):
    # bool is an int subclass in Python; JSON true/false is not a valid argument
    if isinstance(raw, bool) or not isinstance(raw, (str, int, float)):
        raise RecordParseError(f"argument {raw!r} is neither a number nor a name", line_number)
    if isinstance(raw, str):
        return raw
    value = float(raw)
    if not math.isfinite(value):
        raise ValidationError(f"non-finite numeric argument {raw!r}")
    return value


def parse_record(line: str, registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY,
                 line_number: int | None = None) -> TensorProgramRecord:
    """Decode one JSONL line into a record.

    Keys outside the record schema are ignored, and a primitive keeps only its
    type and ordered arguments.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordParseError(f"malformed JSON: {exc.msg}", line_number) from None
    if not isinstance(obj, dict):
        raise RecordParseError("record must be a JSON object", line_number)
    try:
        subgraph_id = obj["subgraph_id"]
        workload = obj["workload"]
        hardware_id = obj["hardware_id"]
        latency = obj["latency"]
        raw_prims = obj["primitives"]
    except KeyError as exc:
        raise RecordParseError(f"missing key {exc.args[0]!r}", line_number) from None
    for key, val in (("subgraph_id", subgraph_id), ("workload", workload),
                     ("hardware_id", hardware_id)):
        if not isinstance(val, str):
            raise RecordParseError(f"{key} must be a string", line_number)
    if isinstance(latency, bool) or not isinstance(latency, (int, float)):
        raise RecordParseError("latency must be a number", line_number)
    if not isinstance(raw_prims, list):
        raise RecordParseError("primitives must be an array", line_number)

    prims = []
    for p in raw_prims:
        if not isinstance(p, dict) or "t" not in p:
            raise RecordParseError("each primitive needs a 't' key", line_number)
        args = p.get("args", [])
        if not isinstance(args, list):
            raise RecordParseError("primitive args must be an array", line_number)
        prims.append(Primitive(registry.index(p["t"]),
                               tuple(_parse_arg(a, line_number) for a in args)))
    return TensorProgramRecord(subgraph_id, workload, hardware_id, float(latency), tuple(prims))


def _format_number(value: float):
    if value.is_integer() and abs(value) < 2**53:
        return int(value)
    return value


def serialize_record(record: TensorProgramRecord,
                     registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY) -> str:
    """Encode a record as one JSON line, keys in schema order."""
    prims = [
        {"t": registry.name(p.type_id),
         "args": [a if isinstance(a, str) else _format_number(a) for a in p.args]}
        for p in record.sequence
    ]
    obj = {
        "subgraph_id": record.subgraph_id,
        "workload": record.workload,
        "hardware_id": record.hardware_id,
        "latency": _format_number(record.latency),
        "primitives": prims,
    }
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def iter_records(lines: Iterable[str],
                 registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY) -> Iterator[TensorProgramRecord]:
    for number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            yield parse_record(stripped, registry, line_number=number)
        except ValidationError as exc:
            raise ValidationError(f"line {number}: {exc}") from None


def read_jsonl(path, registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY) -> list[TensorProgramRecord]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_records(fh, registry))


def write_jsonl(path, records: Iterable[TensorProgramRecord],
                registry: PrimitiveTypeRegistry = DEFAULT_REGISTRY) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(serialize_record(r, registry))
            fh.write("\n")
