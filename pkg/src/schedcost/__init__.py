"""Learned cost models over schedule-primitive sequences.

Submodules are imported lazily so ``schedcost.cli`` can set BLAS thread
counts before numpy loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "primitives": ["PrimitiveTypeRegistry", "DEFAULT_REGISTRY", "Primitive", "TensorProgramRecord",
                   "parse_record", "serialize_record", "read_jsonl", "write_jsonl", "make_sequence"],
    "features": ["FeatureConfig", "TokenTable", "Featurizer", "NormalizationStats",
                 "build_token_table", "embed_primitive", "extract_features", "decode_features",
                 "fit_normalization", "apply_normalization"],
    "dataset": ["DatasetStore", "normalize_labels", "split", "duplicate_rate", "dedup_labels",
                "stats"],
    "model": ["ModelConfig", "CostModel", "init_params"],
    "losses": ["mse_loss", "lambda_rank_loss"],
    "training": ["TrainConfig", "train", "fine_tune", "new_model", "build_samples", "History"],
    "checkpoint": ["save_checkpoint", "load_checkpoint"],
    "mtl": ["MultiTaskModel", "mtl_loss", "train_mtl", "new_multitask_model",
            "extract_single_task"],
    "metrics": ["EvalGroup", "top_k_score", "evaluate", "EvalReport"],
    "synthetic": ["SyntheticSubgraph", "SyntheticOracle", "oracle_latency", "generate_corpus",
                  "make_subgraphs", "brute_force_optimum"],
    "search": ["tune", "evolve", "generate_initial", "search_speedup", "TuningTrajectory",
               "RandomScorer", "OracleScorer", "ModelScorer"],
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_WHERE)


def __getattr__(name: str):
    mod = _WHERE.get(name)
    if mod is None:
        raise AttributeError(f"module 'schedcost' has no attribute {name!r}")
    return getattr(importlib.import_module(f".{mod}", __name__), name)


def __dir__():
    return sorted(list(globals()) + __all__)
