"""End-to-end acceptance checks, one test per criterion.

Each test records a ``CRITERION n: PASS|FAIL`` line (printed in the terminal
summary) and then asserts, so a failure shows both here and in the summary.
"""

import itertools
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from schedcost.cli import main
from schedcost.dataset import DatasetStore, dedup_labels, duplicate_rate
from schedcost.experiments import Recipe, learning_run, mtl_run, search_model, search_run
from schedcost.features import FeatureConfig, build_token_table, decode_features, extract_features
from schedcost.features import Featurizer, NormalizationStats
from schedcost.gradcheck import check_loss, check_model_robust
from schedcost.metrics import EvalGroup, top_k_score
from schedcost.model import CostModel, ModelConfig
from schedcost.mtl import MultiTaskModel
from schedcost.primitives import Primitive, TensorProgramRecord, make_sequence
from schedcost.search import OracleScorer, tune
from schedcost.synthetic import SyntheticOracle, SyntheticSubgraph, brute_force_optimum, grid_template
from schedcost.mtl import mtl_gradients

from conftest import ACCEPTANCE

SEEDS = range(5)


def verdict(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(ACCEPTANCE[-1])
    assert ok, detail


NAMES = ["i.0", "j.1", "k", "ax0", "ff", "vthread", "local", "r.2"]


def random_sequence(rng, cfg: FeatureConfig, crop_safe: bool):
    max_len = cfg.sequence_length if crop_safe else 2 * cfg.sequence_length
    max_args = cfg.arg_slots if crop_safe else cfg.arg_slots + 4
    n = int(rng.integers(1, max_len + 1))
    counts = rng.integers(0, max_args + 1, n)
    types = rng.integers(cfg.num_types, size=n)
    total = int(counts.sum())
    is_name = rng.random(total) < 0.4
    names = rng.integers(len(NAMES), size=total)
    ints = rng.integers(1, 4096, total).astype(float)
    reals = np.round(rng.normal(size=total) * 100, 3)
    nums = np.where(rng.random(total) < 0.7, ints, np.where(reals == 0, 1.0, reals))
    vals = [NAMES[k] if nm else float(v) for nm, k, v in zip(is_name, names, nums)]
    cuts = np.concatenate([[0], np.cumsum(counts)])
    return tuple(Primitive(int(types[i]), tuple(vals[cuts[i]:cuts[i + 1]])) for i in range(n))


def test_criterion_1_featurizer():
    cfg = FeatureConfig()
    rng = np.random.default_rng(1)
    g0 = time.perf_counter()
    shaped = [random_sequence(rng, cfg, crop_safe=False) for _ in range(10_000)]
    safe = [random_sequence(rng, cfg, crop_safe=True) for _ in range(10_000)]
    gen = time.perf_counter() - g0
    t0 = time.perf_counter()  # featurizer work only; input generation is reported apart
    tt = build_token_table(shaped + safe)
    shape_ok = all(extract_features(s, cfg, tt).shape == cfg.shape for s in shaped)
    bad = 0
    for s in safe:
        kinds = [["name" if isinstance(a, str) else "num" for a in p.args] for p in s]
        bad += decode_features(extract_features(s, cfg, tt), cfg, tt, kinds) != [
            (p.type_id, p.args) for p in s]
    dt = time.perf_counter() - t0
    verdict(1, shape_ok and bad == 0 and dt < 10,
            f"shape ok={shape_ok}, inverse-map mismatches={bad}/10000, featurizer {dt:.1f}s "
            f"(< 10s; input generation {gen:.1f}s)")


GRAD_CONFIGS = [
    ModelConfig(hidden_dim=16, attention_heads=2, loss="mse"),
    ModelConfig(hidden_dim=16, attention_heads=2, loss="lambda_rank"),
    ModelConfig(hidden_dim=16, backbone="lstm", loss="mse"),
]


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    worst = {"mse": 0.0, "lambda_rank": 0.0, "model": 0.0}
    for seed in range(50):
        for kind in ("mse", "lambda_rank"):
            worst[kind] = max(worst[kind], check_loss(kind, seed))
        errs = check_model_robust(GRAD_CONFIGS[seed % 3], seed, length=6, embedding=8)
        worst["model"] = max(worst["model"], max(errs.values()))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and dt < 60
    verdict(2, ok, "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
            + f" over 50 instances each, {dt:.1f}s (< 60s)")


def _model(backbone, L=6, E=20, dtype=np.float32, seed=3):
    fz = Featurizer(config=FeatureConfig(sequence_length=L, embedding_size=E),
                    normalization=NormalizationStats(np.ones(E)))
    return CostModel(ModelConfig(hidden_dim=16, attention_heads=2, backbone=backbone), fz,
                     seed=seed).astype(dtype)


def test_criterion_3_permutation_invariance():
    rng = np.random.default_rng(3)
    att, lstm = _model("self_attention"), _model("lstm", dtype=np.float64)
    worst, lstm_invariant = 0.0, 0
    for _ in range(100):
        X = rng.standard_normal((1, 6, 20)).astype(np.float32)
        P = X[:, rng.permutation(6)]
        a, b = att.forward(X), att.forward(P)
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-3))))
        X64 = X.astype(np.float64)
        lstm_invariant += np.allclose(lstm.forward(X64), lstm.forward(X64[:, ::-1]))
    verdict(3, worst <= 1e-6 and lstm_invariant == 0,
            f"attention max rel diff {worst:.1e} (<= 1e-6) on 100 inputs; "
            f"LSTM invariant on {lstm_invariant}/100 (anti-test expects 0)")


def test_criterion_4_masked_mtl():
    rng = np.random.default_rng(4)
    fz = Featurizer(config=FeatureConfig(sequence_length=6, embedding_size=20),
                    normalization=NormalizationStats(np.ones(20)))
    nonzero = mismatched = cases = 0
    for loss, backbone in itertools.product(("mse", "lambda_rank"), ("self_attention", "lstm")):
        cfg = ModelConfig(hidden_dim=16, attention_heads=2, loss=loss, backbone=backbone)
        for trial in range(5):
            m = MultiTaskModel(cfg, fz, tasks=["a", "b", "c"], seed=trial).astype(np.float64)
            B = 10
            X = rng.standard_normal((B, 6, 20))
            labels = np.full((B, 3), np.nan)
            labels[:6, 0] = rng.uniform(0.1, 1, 6)
            labels[6:, 1] = rng.uniform(0.1, 1, 4)  # task c never labeled
            present = ~np.isnan(labels)
            group = np.array([0, 0, 1, 1, 1, 0, 2, 2, 3, 3])
            kinds = [loss] * 3
            _, mixed = mtl_gradients(m, X, labels, present, group, kinds,
                                     segments=[slice(0, 6), slice(6, B)])
            _, ga = mtl_gradients(m, X[:6], labels[:6], present[:6], group[:6], kinds)
            _, gb = mtl_gradients(m, X[6:], labels[6:], present[6:], group[6:], kinds)
            nonzero += sum(bool(mixed[n].any()) for n in m.head_names(2))
            mismatched += sum(not np.array_equal(mixed[n], ga[n] + gb[n]) for n in m.shared_names())
            cases += 1
    verdict(4, nonzero == 0 and mismatched == 0,
            f"{cases} batches: unlabeled-head nonzero grads={nonzero}, "
            f"shared additivity mismatches={mismatched} (both must be 0, exact)")


def _brute(groups, k):
    num = den = 0.0
    for lat, sc, w in groups:
        order = sorted(range(len(lat)), key=lambda i: (-sc[i], i))
        num += min(lat) * w
        den += min(lat[i] for i in order[:k]) * w
    return num / den


def test_criterion_5_top_k_oracle():
    vals = (1.0, 2.0, 5.0)
    singles = [(lat, sc) for n in range(1, 4)
               for lat in itertools.product(vals, repeat=n)
               for sc in itertools.product((0.0, 1.0, 2.0), repeat=n)]
    # all 1-group instances with <= 3 candidates, all 2-group pairs of <= 2 candidates,
    # plus sampled group-size 4-5 and 3-group instances
    small = [p for p in singles if len(p[0]) <= 2]
    instances = [[p] for p in singles] + [[a, b] for a in small for b in small]
    rng = np.random.default_rng(5)
    for _ in range(3000):
        gs = []
        for _ in range(int(rng.integers(1, 4))):
            n = int(rng.integers(1, 6))
            gs.append((tuple(rng.choice(vals, n)), tuple(rng.choice((0.0, 1.0, 2.0), n))))
        instances.append(gs)
    mismatch = 0
    for inst in instances:
        gs = [(l, s, 1 + i) for i, (l, s) in enumerate(inst)]
        for k in range(1, 6):
            got = top_k_score([EvalGroup(l, s, w) for l, s, w in gs], k)
            mismatch += abs(got - _brute(gs, k)) > 1e-12
    mono = inv = 0
    for _ in range(1000):
        gs = []
        for _ in range(int(rng.integers(1, 4))):
            n = int(rng.integers(1, 9))
            gs.append(EvalGroup(rng.uniform(1e-3, 1.0, n), np.round(rng.normal(size=n), 1),
                                int(rng.integers(1, 5))))
        k = int(rng.integers(1, 8))
        mono += top_k_score(gs, k) > top_k_score(gs, k + 1)
        warped = [EvalGroup(g.latencies, np.exp(3 * np.asarray(g.scores)) + 5, g.weight) for g in gs]
        inv += top_k_score(gs, k) != top_k_score(warped, k)
    verdict(5, mismatch == 0 and mono == 0 and inv == 0,
            f"{len(instances)} enumerable instances x k=1..5 brute-force mismatches={mismatch}; "
            f"1000 random: monotonicity violations={mono}, transform-invariance violations={inv}")


def _rec(lat, tile):
    return TensorProgramRecord("s", "w", "hw", lat, make_sequence([("SP", ["i", tile])]))


def test_criterion_6_duplicates():
    cfg = FeatureConfig()
    rng = np.random.default_rng(6)
    cases = [(10, 8)] + [(int(t), int(d)) for t, d in
                         ((rng.integers(2, 40), 0) for _ in range(30))]
    cases = [(t, d if d else int(rng.integers(1, t + 1))) for t, d in cases]
    errors = []
    for total, distinct in cases:
        recs = [_rec(1.0 + i, i) for i in range(distinct)]
        recs += [_rec(50.0 + i, int(rng.integers(distinct))) for i in range(total - distinct)]
        store = DatasetStore(recs)
        tt = build_token_table(r.sequence for r in recs)
        rate = duplicate_rate(store, cfg, tt).rate
        if rate != (total - distinct) / total:
            errors.append(f"rate {rate} for {total}/{distinct}")
        out = dedup_labels(store, cfg, tt)
        if duplicate_rate(out, cfg, tt).rate != 0.0 or len(out.records) != distinct:
            errors.append(f"dedup left duplicates for {total}/{distinct}")
        labels = dict(zip((r.sequence[0].args[1] for r in out.records), out.labels()))
        full = store.labels()
        for tile, lab in labels.items():
            best = max(full[i] for i, r in enumerate(recs) if r.sequence[0].args[1] == tile)
            if lab != best:
                errors.append(f"label of tile {tile}: {lab} != max {best}")
    first = duplicate_rate(DatasetStore([_rec(1.0 + i, i) for i in range(8)] +
                                        [_rec(9.0, 0), _rec(9.5, 1)]), cfg,
                           build_token_table([make_sequence([("SP", ["i", 0])])])).rate
    verdict(6, not errors and first == 0.2,
            f"10-record/8-distinct rate={first}; {len(cases)} planted cases, errors={errors[:3]}")


@pytest.mark.slow
def test_criterion_7_synthetic_learning():
    t0 = time.perf_counter()
    runs = [learning_run(s) for s in SEEDS]
    rand5 = np.mean([r["random"][5] for r in runs])
    rank = {k: np.mean([r["lambda_rank"][k] for r in runs]) for k in (1, 5)}
    mse = {k: np.mean([r["mse"][k] for r in runs]) for k in (1, 5)}
    dt = time.perf_counter() - t0
    ok = rank[5] >= rand5 + 0.15 and rank[1] >= mse[1] - 0.02 and dt < 900
    verdict(7, ok, f"5 seeds: rank top5={rank[5]:.3f} vs random top5={rand5:.3f} (+0.15 needed); "
            f"top1 rank={rank[1]:.3f} vs mse={mse[1]:.3f} (>= -0.02); {dt:.0f}s (< 900s)")


@pytest.mark.slow
def test_criterion_8_mtl_benefit():
    t0 = time.perf_counter()
    runs = [mtl_run(s) for s in SEEDS]
    mean = {m: np.mean([r[m][5] for r in runs]) for m in ("mtl", "single", "fine_tune")}
    dt = time.perf_counter() - t0
    ok = mean["mtl"] >= mean["single"] and mean["mtl"] >= mean["fine_tune"] - 0.01 and dt < 1200
    verdict(8, ok, f"5 seeds, target top5: mtl={mean['mtl']:.4f} single={mean['single']:.4f} "
            f"fine-tune={mean['fine_tune']:.4f} (mtl >= single, mtl >= fine-tune - 0.01); "
            f"{dt:.0f}s (< 1200s)")


@pytest.mark.slow
def test_criterion_9_search():
    t0 = time.perf_counter()
    model, oracle, _ = search_model(0)
    res = search_run(model, oracle, seeds=range(10), subgraphs=20)
    reached = int(np.isfinite(res.model_measurements).sum())
    grid = SyntheticSubgraph("grid", grid_template(), oracle_seed=3)
    cheats = 0
    for seed in range(10):
        o = SyntheticOracle(seed)
        best = brute_force_optimum(o, grid)[0]
        traj = tune([grid], OracleScorer(o), o, rounds=1, measure_per_round=10, seed=seed)
        cheats += traj.best[grid.id] == best
    dt = time.perf_counter() - t0
    ok = res.ratio <= 0.5 and reached == len(res.model_measurements) and cheats == 10 and dt < 600
    verdict(9, ok, f"model/random measurements to 5% of optimum = {res.ratio:.3f} (<= 0.5) over "
            f"{len(res.model_measurements)} searches ({reached} reached); cheating oracle optimal "
            f"in round 1: {cheats}/10; {dt:.0f}s (< 600s)")


def _snapshot(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_10_reproducibility(tmp_path):
    small = ["--threads", "1", "--seed", "5", "--set", "model.hidden_dim=16",
             "--set", "model.attention_heads=2", "--set", "feature.sequence_length=12",
             "--set", "split.holdout_workloads=net1"]
    gen = tmp_path / "gen"
    data, spec = gen / "dataset.jsonl", gen / "workload.json"
    commands = [
        ("gen-synthetic", ["gen-synthetic", "--set", "synthetic.workloads=2",
                           "--set", "synthetic.subgraphs_per_workload=4",
                           "--set", "synthetic.candidates=16", "--set", "synthetic.hardware=a,b"]),
        ("stats", ["stats", data]),
        ("featurize", ["featurize", data]),
        ("train", ["train", data, "--hardware", "a", "--epochs", "2", "--workload", spec]),
        ("train-mtl", ["train-mtl", data, "--target-task", "b", "--epochs", "2"]),
        ("eval", ["eval", data, "--checkpoint", tmp_path / "train" / "checkpoint",
                  "--split-file", tmp_path / "train" / "split.json", "--task", "a"]),
        ("search", ["search", "--workload", spec, "--checkpoint", tmp_path / "train" / "checkpoint",
                    "--rounds", "3", "--pool-size", "32"]),
    ]
    diffs = []
    for name, argv in commands:
        out = gen if name == "gen-synthetic" else tmp_path / name
        args = [str(a) for a in argv] + ["--out", str(out)] + small
        assert main(args) == 0, name
        first = _snapshot(out)
        elsewhere = tmp_path / "again" / name
        assert main(args[:-len(small) - 2] + ["--out", str(elsewhere)] + small) == 0, name
        assert main(args) == 0, name
        second, other = _snapshot(out), _snapshot(elsewhere)
        diffs += [f"{name}/{f}" for f in first if first[f] != second.get(f)]
        diffs += [f"{name}/{f} (other dir)" for f in first
                  if f != "run.json" and first[f] != other.get(f)]
        if json.loads(first["run.json"])["outputs"] != json.loads(other["run.json"])["outputs"]:
            diffs.append(f"{name}/run.json output digests")
    verdict(10, not diffs, f"{len(commands)} commands re-run single-threaded; differing files: "
            f"{diffs or 'none'}")
