import numpy as np
import pytest

from schedcost.checkpoint import load_checkpoint, save_checkpoint
from schedcost.errors import ConfigError, ValidationError
from schedcost.features import FeatureConfig, Featurizer, NormalizationStats
from schedcost.model import ModelConfig
from schedcost.mtl import (
    MultiTaskModel, extract_single_task, mtl_gradients, mtl_loss, new_multitask_model, train_mtl,
)
from schedcost.training import SHARED_PREFIXES, TrainConfig, build_samples, fit, new_model, train

from conftest import TINY, small_store

FC = FeatureConfig(sequence_length=12)
NAN = np.nan


def mtl_model(tasks=("a", "b"), dtype=np.float64, seed=0, **kw):
    fz = Featurizer(config=FeatureConfig(sequence_length=6, embedding_size=20),
                    normalization=NormalizationStats(np.ones(20)))
    return MultiTaskModel(ModelConfig(**{**TINY, **kw}), fz, tasks=list(tasks), seed=seed).astype(dtype)


def test_mtl_loss_examples():
    preds = np.array([[0.3, 0.5]])
    labels = np.array([[NAN, 0.5]])
    loss, grad = mtl_loss(preds, labels, ~np.isnan(labels), np.zeros(1, int), ["mse", "mse"])
    assert loss == 0.0 and not grad.any()
    labels = np.array([[1.0, NAN]])
    preds = np.array([[0.5, 0.9]])
    loss, grad = mtl_loss(preds, labels, ~np.isnan(labels), np.zeros(1, int), ["mse", "mse"])
    assert loss == 0.25 and grad[0, 1] == 0.0


def test_all_absent_is_error():
    labels = np.full((2, 2), NAN)
    with pytest.raises(ValidationError):
        mtl_loss(np.zeros((2, 2)), labels, ~np.isnan(labels), np.zeros(2, int), ["mse", "mse"])


def test_needs_two_tasks():
    with pytest.raises(ConfigError):
        mtl_model(tasks=("a",))
    with pytest.raises(ConfigError):
        mtl_model(tasks=("a", "a"))


def _batch(rng, B=8, T=3, absent=(2,)):
    X = rng.standard_normal((B, 6, 20))
    labels = rng.uniform(0.1, 1.0, (B, T))
    for t in absent:
        labels[:, t] = NAN
    return X, labels, ~np.isnan(labels), np.arange(B) % 2


@pytest.mark.parametrize("loss", ["mse", "lambda_rank"])
def test_absent_head_gets_exactly_zero_gradient(rng, loss):
    m = mtl_model(("a", "b", "c"), loss=loss)
    X, labels, present, group = _batch(rng)
    _, grads = mtl_gradients(m, X, labels, present, group, [loss] * 3)
    for n in m.head_names(2):
        assert grads[n].dtype == np.float64 and not grads[n].any(), n
    assert any(grads[n].any() for n in m.head_names(0))


@pytest.mark.parametrize("loss", ["mse", "lambda_rank"])
@pytest.mark.parametrize("backbone", ["self_attention", "lstm"])
def test_shared_gradient_additivity(rng, loss, backbone):
    """Mixed batch == sum of per-task sub-batches, bit for bit, under ordered reduction."""
    m = mtl_model(("a", "b"), loss=loss, backbone=backbone)
    B = 10
    X = rng.standard_normal((B, 6, 20))
    labels = np.full((B, 2), NAN)
    labels[:6, 0] = rng.uniform(0.1, 1, 6)
    labels[6:, 1] = rng.uniform(0.1, 1, 4)
    present = ~np.isnan(labels)
    group = np.array([0, 0, 1, 1, 1, 0, 2, 2, 3, 3])
    kinds = [loss, loss]
    seg = [slice(0, 6), slice(6, B)]
    _, mixed = mtl_gradients(m, X, labels, present, group, kinds, segments=seg)
    _, ga = mtl_gradients(m, X[:6], labels[:6], present[:6], group[:6], kinds)
    _, gb = mtl_gradients(m, X[6:], labels[6:], present[6:], group[6:], kinds)
    for n in m.shared_names():
        assert np.array_equal(mixed[n], ga[n] + gb[n]), n


@pytest.fixture(scope="module")
def twin():
    return small_store(seed=1, hardware=("tgt", "src"), rho=0.8, candidates=24)


def test_one_task_degenerates_to_single_task_training(twin):
    store = twin.subset(None, "tgt")
    m1 = new_model(store.subset("train"), ModelConfig(**TINY), FC, tasks=["tgt"])
    m2 = m1.copy()
    cfg = TrainConfig(epochs=3, groups_per_batch=4)
    _, h1 = train(m1, store, cfg)
    t = build_samples(store.subset("train"), m2.featurizer, ["tgt"])
    v = build_samples(store.subset("val"), m2.featurizer, ["tgt"])
    _, h2 = fit(m2, t, v, cfg)
    assert h1.rows == h2["tgt"].rows


def test_freezing_shared_trains_only_head0(twin):
    m = new_multitask_model(twin.subset("train"), ["tgt", "src"], ModelConfig(**TINY), FC)
    before = {n: v.copy() for n, v in m.params.items()}
    cfg = TrainConfig(epochs=2, groups_per_batch=4, frozen=SHARED_PREFIXES + ("head.1.",))
    m, _ = train_mtl(m, twin, cfg)
    changed = {n for n, v in m.params.items() if not np.array_equal(before[n], v)}
    assert changed and all(n.startswith("head.0.") for n in changed), changed


def test_train_mtl_tracks_every_task(twin):
    m = new_multitask_model(twin.subset("train"), ["tgt", "src"], ModelConfig(**TINY), FC)
    m, hists = train_mtl(m, twin, TrainConfig(epochs=2, groups_per_batch=4))
    assert set(hists) == {"tgt", "src"} and len(hists["src"].rows) == 3
    assert m.target_task == "tgt"


def test_extract_single_task(rng, tmp_path):
    m = mtl_model(("a", "b", "c"), dtype=np.float32, seed=4)
    X = rng.standard_normal((100, 6, 20)).astype(np.float32)
    for k, name in enumerate(m.tasks):
        single = extract_single_task(m, name)
        assert single.tasks == [name]
        assert np.array_equal(single.forward(X), m.forward(X, k))
    single = extract_single_task(m, "a")
    save_checkpoint(single, tmp_path / "ck")
    assert np.array_equal(load_checkpoint(tmp_path / "ck").forward(X), single.forward(X))
    with pytest.raises(KeyError):
        extract_single_task(m, "zz")


def test_mtl_checkpoint_lists_tasks(tmp_path, rng):
    m = mtl_model(("a", "b"), dtype=np.float32)
    save_checkpoint(m, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    assert isinstance(back, MultiTaskModel) and back.tasks == ["a", "b"]
    X = rng.standard_normal((5, 6, 20)).astype(np.float32)
    assert np.array_equal(back.forward_all(X), m.forward_all(X))
