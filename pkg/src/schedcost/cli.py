"""``schedcost`` command line: stats, featurize, train, train-mtl, eval, search, gen-synthetic.

Every command writes its outputs under ``--out`` plus a ``run.json``
provenance record (arguments, effective config, input and output digests).
Exit codes: 2 usage or missing input, 3 bad data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_path(path: Path) -> str:
    """sha256 of a file, or of the sorted (name, digest) list of a directory."""
    if path.is_dir():
        items = [(str(p.relative_to(path)), _sha256_file(p))
                 for p in sorted(path.rglob("*")) if p.is_file()]
        return hashlib.sha256(json.dumps(items).encode()).hexdigest()
    return _sha256_file(path)


def _need(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _run_config(args, flags: dict):
    from .config import RunConfig, load_config_file

    file_layer = load_config_file(_need(args.config, "config file")) if args.config else {}
    return RunConfig.build(file_layer, _overrides(args), flags)


def _finish(args, out: Path, cfg, inputs: dict[str, Path], outputs: list[str]) -> None:
    from .features import stable_hash

    cfg_dict = cfg.to_dict()
    (out / "config.txt").write_text(cfg.to_text())
    record = {
        "command": args.command,
        "argv": args.argv,
        "seed": args.seed,
        "config": cfg_dict,
        "config_digest": stable_hash(cfg_dict),
        "inputs": {k: _digest_path(p) for k, p in sorted(inputs.items())},
        "outputs": {name: _digest_path(out / name) for name in sorted(outputs)},
    }
    _write_json(out / "run.json", record)


def _load_store(path: Path, workload_spec: Path | None):
    from .dataset import DatasetStore

    store = DatasetStore.from_jsonl(path)
    if workload_spec is not None:
        spec = json.loads(workload_spec.read_text())
        store.weights = {(s.get("workload", "synthetic"), s["id"]): int(s.get("weight", 1))
                         for s in spec.get("subgraphs", [])}
    return store


def _split_store(store, cfg, split_file: Path | None):
    from .dataset import split

    if split_file is not None:
        return store.load_assignment(split_file)
    return split(store, cfg.split.val_fraction, cfg.split.holdout_workloads, cfg.split.seed)


# -- commands ---------------------------------------------------------------

def cmd_stats(args) -> list[str]:
    from .dataset import duplicate_rate, stats
    from .features import build_token_table

    data = _need(args.dataset, "dataset")
    cfg = _run_config(args, {})
    store = _load_store(data, None)
    report = stats(store, cfg.feature)
    tt = build_token_table(r.sequence for r in store.records)
    nonempty = type(store)([r for r in store.records if r.sequence])
    if nonempty.records:
        dup = duplicate_rate(nonempty, cfg.feature, tt)
        report.duplicate_rate, report.distinct = dup.rate, dup.distinct
    out = args.out
    report.write_csv(out / "length_histogram.csv", out / "type_max_embedding.csv")
    _write_json(out / "stats.json", report.to_json())
    _finish(args, out, cfg, {"dataset": data},
            ["length_histogram.csv", "type_max_embedding.csv", "stats.json"])
    return []


def cmd_featurize(args) -> list[str]:
    import numpy as np
    from .training import build_featurizer

    data = _need(args.dataset, "dataset")
    cfg = _run_config(args, {})
    store = _split_store(_load_store(data, None), cfg, _opt_path(args.split_file))
    train_store = store.subset("train")
    if not train_store.records:
        raise UsageError("the split leaves no training records to fit the featurizer on")
    fz = build_featurizer(train_store, cfg.feature)
    out = args.out
    np.save(out / "features.npy", fz.transform([r.sequence for r in store.records]))
    _write_json(out / "featurizer.json", fz.to_dict())
    store.save_assignment(out / "split.json")
    _finish(args, out, cfg, {"dataset": data}, ["features.npy", "featurizer.json", "split.json"])
    return []


def _opt_path(p):
    return None if p is None else _need(p, "file")


def cmd_train(args) -> list[str]:
    from .checkpoint import save_checkpoint
    from .training import fine_tune, new_model, train

    data = _need(args.dataset, "dataset")
    cfg = _run_config(args, {"train.seed": args.seed, "train.epochs": args.epochs})
    store = _split_store(_load_store(data, _opt_path(args.workload)), cfg, _opt_path(args.split_file))
    hw = args.hardware or _single_hardware(store)
    inputs = {"dataset": data}
    if args.init_checkpoint:
        ck = _need(args.init_checkpoint, "init checkpoint")
        inputs["init_checkpoint"] = ck
        model, hist = fine_tune(ck, store, cfg.train, cfg.feature, hw)
    else:
        model = new_model(store.subset("train", hw), cfg.model, cfg.feature, tasks=[hw],
                          seed=cfg.train.seed)
        model, hist = train(model, store, cfg.train, hw)
    out = args.out
    save_checkpoint(model, out / "checkpoint")
    hist.write_csv(out / "history.csv")
    store.save_assignment(out / "split.json")
    _finish(args, out, cfg, inputs, ["checkpoint", "history.csv", "split.json"])
    return []


def _single_hardware(store) -> str:
    hws = store.hardware_ids
    if len(hws) != 1:
        raise UsageError(f"dataset holds hardware {hws}; pass --hardware")
    return hws[0]


def cmd_train_mtl(args) -> list[str]:
    from .checkpoint import save_checkpoint
    from .mtl import new_multitask_model, train_mtl

    data = _need(args.dataset, "dataset")
    if not args.target_task:
        raise UsageError("--target-task is required")
    cfg = _run_config(args, {"train.seed": args.seed, "train.epochs": args.epochs})
    store = _split_store(_load_store(data, _opt_path(args.workload)), cfg, _opt_path(args.split_file))
    others = [t for t in (args.tasks.split(",") if args.tasks else store.hardware_ids)
              if t and t != args.target_task]
    tasks = [args.target_task] + others
    missing = set(tasks) - set(store.hardware_ids)
    if missing:
        raise UsageError(f"tasks without data: {sorted(missing)}")
    model = new_multitask_model(store.subset("train"), tasks, cfg.model, cfg.feature,
                                seed=cfg.train.seed)
    model, hists = train_mtl(model, store, cfg.train)
    out = args.out
    save_checkpoint(model, out / "checkpoint")
    names = []
    for t, h in hists.items():
        h.write_csv(out / f"history_{t}.csv")
        names.append(f"history_{t}.csv")
    store.save_assignment(out / "split.json")
    _finish(args, out, cfg, {"dataset": data}, ["checkpoint", "split.json"] + names)
    return []


def cmd_eval(args) -> list[str]:
    from .checkpoint import load_checkpoint
    from .metrics import evaluate

    data = _need(args.dataset, "dataset")
    ck = _need(args.checkpoint, "--checkpoint")
    cfg = _run_config(args, {})
    store = _load_store(data, _opt_path(args.workload))
    split_name = args.split
    if args.split_file:
        store.load_assignment(_need(args.split_file, "split file"))
    elif split_name != "all":
        raise UsageError("--split needs --split-file (or use --split all)")
    model = load_checkpoint(ck)
    task = args.task if args.task is not None else model.tasks[0]
    if task not in model.tasks:
        raise UsageError(f"task {task!r} not in checkpoint tasks {model.tasks}")
    store = store.subset(None if split_name == "all" else split_name, task)
    if not store.records:
        raise UsageError(f"no records for split {split_name!r} and task {task!r}")
    report = evaluate(model, store, split=None, task=task)
    out = args.out
    report.write_csv(out / "eval.csv")
    report.write_json(out / "eval.json")
    inputs = {"dataset": data, "checkpoint": ck}
    _finish(args, out, cfg, inputs, ["eval.csv", "eval.json"])
    print(json.dumps({f"top{k}": v for k, v in report.aggregate.items()}))
    return []


def cmd_search(args) -> list[str]:
    from .checkpoint import load_checkpoint
    from .search import ModelScorer, OracleScorer, RandomScorer, tune
    from .synthetic import load_workload_spec

    spec = _need(args.workload, "--workload")
    cfg = _run_config(args, {"search.rounds": args.rounds,
                             "search.measure_per_round": args.measure_per_round,
                             "search.pool_size": args.pool_size,
                             "search.evolution_iters": args.evolution_iters})
    subs, oracles = load_workload_spec(spec)
    if not oracles:
        raise UsageError("workload spec defines no oracle")
    hw = args.hardware or sorted(oracles)[0]
    if hw not in oracles:
        raise UsageError(f"no oracle for hardware {hw!r}; workload spec has {sorted(oracles)}")
    if args.subgraphs:
        keep = set(args.subgraphs.split(","))
        subs = [s for s in subs if s.id in keep]
    inputs = {"workload": spec}
    if args.checkpoint:
        ck = _need(args.checkpoint, "--checkpoint")
        inputs["checkpoint"] = ck
        model = load_checkpoint(ck)
        scorer = ModelScorer(model, args.task if args.task is not None else 0)
    elif args.scorer == "random":
        scorer = RandomScorer(args.seed)
    elif args.scorer == "oracle":
        scorer = OracleScorer(oracles[hw])
    else:
        raise UsageError("search needs --checkpoint or --scorer random|oracle")
    sc = cfg.search
    traj = tune(subs, scorer, oracles[hw], sc.rounds, sc.measure_per_round, args.seed,
                sc.pool_size, sc.evolution_iters, sc.mutation_rate, sc.crossover_rate)
    out = args.out
    traj.write_csv(out / "trajectory.csv")
    _write_json(out / "search.json", {
        "rounds": traj.rounds, "measurements": traj.measurements,
        "best_latency": traj.best_latency if traj.best else None,
        "best_per_subgraph": traj.best,
    })
    _finish(args, out, cfg, inputs, ["trajectory.csv", "search.json"])
    return []


def cmd_gen_synthetic(args) -> list[str]:
    from .primitives import write_jsonl
    from .synthetic import SyntheticOracle, generate_corpus, make_subgraphs

    cfg = _run_config(args, {})
    sc = cfg.synthetic
    hws = list(sc.hardware)
    if not hws:
        raise UsageError("synthetic.hardware must list at least one id")
    base = SyntheticOracle(args.seed, sigma=sc.sigma, pair_scale=sc.pair_scale)
    oracles = {hws[0]: base}
    for n, hw in enumerate(hws[1:], 1):
        oracles[hw] = base.correlated(args.seed + 1000 * n, sc.correlation)
    subs = []
    for w in range(sc.workloads):
        subs += make_subgraphs(sc.subgraphs_per_workload, args.seed, workload=f"net{w}",
                               prefix=f"net{w}_sg", max_space=sc.max_space or None, weights=True)
    corpus = generate_corpus(subs, oracles, sc.candidates, args.seed)
    out = args.out
    write_jsonl(out / "dataset.jsonl", corpus.records)
    corpus.write_workload_spec(out / "workload.json")
    _finish(args, out, cfg, {}, ["dataset.jsonl", "workload.json"])
    return []


COMMANDS = {
    "stats": cmd_stats,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "train-mtl": cmd_train_mtl,
    "eval": cmd_eval,
    "search": cmd_search,
    "gen-synthetic": cmd_gen_synthetic,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, type=Path, help="output directory")
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override, e.g. model.hidden_dim=64 (repeatable)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS threads for featurization/scoring (default: all cores)")

    p = _Parser(prog="schedcost", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("stats", parents=[common], help="sequence-length and embedding statistics")
    s.add_argument("dataset")

    s = sub.add_parser("featurize", parents=[common], help="write the feature tensor of a dataset")
    s.add_argument("dataset")
    s.add_argument("--split-file")

    for name in ("train", "train-mtl"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("dataset")
        s.add_argument("--epochs", type=int, default=None)
        s.add_argument("--split-file")
        s.add_argument("--workload", help="workload spec JSON supplying subgraph weights")
        if name == "train":
            s.add_argument("--hardware")
            s.add_argument("--init-checkpoint", help="fine-tune from this checkpoint")
        else:
            s.add_argument("--target-task", help="hardware id of the target task (head 0)")
            s.add_argument("--tasks", help="comma-separated auxiliary hardware ids (default: all)")

    s = sub.add_parser("eval", parents=[common], help="weighted top-k of a checkpoint")
    s.add_argument("dataset")
    s.add_argument("--checkpoint")
    s.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    s.add_argument("--split-file")
    s.add_argument("--workload")
    s.add_argument("--task")

    s = sub.add_parser("search", parents=[common], help="simulated tuning against the oracle")
    s.add_argument("--workload", help="workload spec JSON from gen-synthetic")
    s.add_argument("--checkpoint")
    s.add_argument("--scorer", choices=["random", "oracle"])
    s.add_argument("--hardware")
    s.add_argument("--task", type=int)
    s.add_argument("--subgraphs", help="comma-separated subgraph ids to tune (default: all)")
    s.add_argument("--rounds", type=int)
    s.add_argument("--measure-per-round", type=int)
    s.add_argument("--pool-size", type=int)
    s.add_argument("--evolution-iters", type=int)

    sub.add_parser("gen-synthetic", parents=[common], help="seeded synthetic dataset + workload spec")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"schedcost: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args.argv = argv
    # only effective before numpy is first imported; an explicit flag wins over the environment
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        if args.threads:
            os.environ[var] = str(args.threads)
        else:
            os.environ.setdefault(var, str(os.cpu_count() or 1))

    from .errors import (
        CheckpointError, ConfigError, NumericalError, RecordParseError, RegistryError,
        ValidationError,
    )

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"schedcost: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"schedcost: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RecordParseError, RegistryError, ValidationError, CheckpointError) as exc:
        print(f"schedcost: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"schedcost: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
