"""Checkpoint directory: ``manifest.json`` + ``weights.bin``.

``weights.bin`` is every tensor as little-endian float32, concatenated in
manifest order.  The manifest carries the configs, registry, token table,
normalization scales and a tensor index (shape, byte offset, sha256), and is
itself sealed by a sha256 over its canonical JSON form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .features import Featurizer
from .model import CostModel, ModelConfig

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _seal(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "digest"}
    return hashlib.sha256(_canonical(body)).hexdigest()


def save_checkpoint(model: CostModel, path, extra: dict | None = None) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    blobs = []
    offset = 0
    for name, value in model.params.items():
        blob = np.ascontiguousarray(value, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(value.shape), "offset": offset,
                      "nbytes": len(blob), "sha256": hashlib.sha256(blob).hexdigest()})
        blobs.append(blob)
        offset += len(blob)
    weights = b"".join(blobs)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "featurizer": model.featurizer.to_dict(),
        "tasks": list(model.tasks),
        "tensors": index,
        "weights_sha256": hashlib.sha256(weights).hexdigest(),
        "weights_nbytes": len(weights),
    }
    if extra:
        manifest["extra"] = extra
    manifest["digest"] = _seal(manifest)
    (out / WEIGHTS).write_bytes(weights)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def read_manifest(path) -> dict:
    p = Path(path) / MANIFEST
    try:
        manifest = json.loads(p.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"no manifest at {p}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"manifest is not valid JSON: {exc}") from None
    if manifest.get("digest") != _seal(manifest):
        raise CheckpointError("manifest digest mismatch; the manifest was modified or corrupted")
    return manifest


def load_checkpoint(path) -> CostModel:
    manifest = read_manifest(path)
    wpath = Path(path) / WEIGHTS
    try:
        weights = wpath.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"no weights file at {wpath}") from None
    if len(weights) != manifest["weights_nbytes"]:
        raise CheckpointError(
            f"weights file has {len(weights)} bytes, manifest expects {manifest['weights_nbytes']}")
    if hashlib.sha256(weights).hexdigest() != manifest["weights_sha256"]:
        raise CheckpointError("weights digest mismatch")
    params = {}
    for t in manifest["tensors"]:
        blob = weights[t["offset"]:t["offset"] + t["nbytes"]]
        if hashlib.sha256(blob).hexdigest() != t["sha256"]:
            raise CheckpointError(f"digest mismatch for tensor {t['name']}")
        params[t["name"]] = np.frombuffer(blob, dtype="<f4").astype(np.float32).reshape(t["shape"])
    config = ModelConfig(**manifest["model_config"])
    featurizer = Featurizer.from_dict(manifest["featurizer"])
    if len(manifest["tasks"]) > 1:
        from .mtl import MultiTaskModel
        return MultiTaskModel(config, featurizer, params, tasks=manifest["tasks"])
    return CostModel(config, featurizer, params, tasks=manifest["tasks"])
