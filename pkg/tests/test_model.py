import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from schedcost.errors import ConfigError
from schedcost.features import FeatureConfig, Featurizer, NormalizationStats
from schedcost.gradcheck import check_model_robust, random_case, check_model, KinkError
from schedcost.model import CostModel, ModelConfig, init_params, network_forward

SMALL = dict(hidden_dim=16, attention_heads=2, residual_blocks=2)


def featurizer(L=6, E=20):
    fc = FeatureConfig(num_types=14, sequence_length=L, embedding_size=E)
    return Featurizer(config=fc, normalization=NormalizationStats(np.ones(E)))


def model(dtype=np.float32, **kw):
    m = CostModel(ModelConfig(**{**SMALL, **kw}), featurizer(), seed=3)
    return m.astype(dtype)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(hidden_dim=18, attention_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(residual_blocks=-1)
    with pytest.raises(ConfigError):
        ModelConfig(backbone="transformer")
    assert ModelConfig().hidden_dim == 256 and ModelConfig().attention_heads == 8


def test_zero_weights_zero_input_scores_zero():
    m = model()
    m.params = {n: np.zeros_like(v) for n, v in m.params.items()}
    assert m.forward(np.zeros((1, 6, 20), np.float32)).tolist() == [0.0]


def test_shape_mismatch_is_config_error():
    with pytest.raises(ConfigError):
        model().forward(np.zeros((2, 5, 20), np.float32))


def test_param_shape_check():
    m = model()
    bad = dict(m.params)
    bad["up.0.W"] = bad["up.0.W"][:, :3]
    with pytest.raises(ConfigError):
        CostModel(m.config, m.featurizer, bad)


def test_deterministic_init_and_forward(rng):
    X = rng.standard_normal((5, 6, 20)).astype(np.float32)
    a, b = model(), model()
    assert a.forward(X).tobytes() == b.forward(X).tobytes()


@pytest.mark.parametrize("layer_norm", [False, True])
def test_attention_permutation_invariance(rng, layer_norm):
    m64 = model(np.float64, layer_norm=layer_norm)
    m32 = model(np.float32, layer_norm=layer_norm)
    for _ in range(10):
        X = rng.standard_normal((3, 6, 20))
        P = X[:, rng.permutation(6)]
        assert np.array_equal(m64.forward(X), m64.forward(P)) or np.allclose(
            m64.forward(X), m64.forward(P), rtol=1e-13, atol=0)
        a, b = m32.forward(X.astype(np.float32)), m32.forward(P.astype(np.float32))
        assert np.all(np.abs(a - b) <= 1e-6 * np.maximum(np.abs(a), 1e-3))


def test_lstm_is_not_permutation_invariant(rng):
    m = model(np.float64, backbone="lstm")
    X = rng.standard_normal((3, 6, 20))
    P = X[:, ::-1]
    assert not np.allclose(m.forward(X), m.forward(P))


def test_positional_encoding_breaks_invariance(rng):
    m = model(np.float64, positional_encoding=True)
    m.params["pos"] = rng.standard_normal(m.params["pos"].shape)
    X = rng.standard_normal((3, 6, 20))
    assert not np.allclose(m.forward(X), m.forward(X[:, ::-1]))


def _zero_biases(m):
    for n in m.params:
        if n.endswith(("b", "bq", "bk", "bv", "bo", "b1", "b2")):
            m.params[n] = np.zeros_like(m.params[n])


def _head_values(m, X):
    from schedcost import nn
    _, cache = network_forward(m.params, m.config, X, 1)
    c0, mask, c1 = cache[6][0]
    a = nn.relu_forward(c0 @ m.params["head.0.0.W"] + m.params["head.0.0.b"])[0]
    return (a @ m.params["head.0.1.W"] + m.params["head.0.1.b"])[..., 0]


def test_padding_rows_share_one_head_value(rng):
    """Every zero row sees the same (uniform) attention, hence the same head value."""
    m = model(np.float64)
    X = rng.standard_normal((4, 6, 20))
    X[:, 3:] = 0.0
    v = _head_values(m, X)
    assert np.all(v[:, 3:] == v[:, 3:4])


def test_zero_bias_padding_contributes_zero_without_mixing(rng):
    m = model(np.float64, backbone_layers=0)
    _zero_biases(m)
    X = rng.standard_normal((4, 6, 20))
    X[:, 3:] = 0.0
    v = _head_values(m, X)
    assert not v[:, 3:].any()
    assert np.array_equal(m.forward(X), v[:, :3].sum(axis=1))


def test_mask_padding_makes_score_independent_of_padding_count(rng):
    m = model(np.float64, mask_padding=True)
    X = rng.standard_normal((2, 6, 20))
    X[:, 3:] = 0.0
    full = m.forward(X)
    # same valid rows placed at different positions give the same score
    Y = np.zeros_like(X)
    Y[:, [1, 4, 5]] = X[:, :3]
    assert np.allclose(full, m.forward(Y), rtol=1e-12)


def test_init_is_uniform_in_fan_in_bound():
    p = init_params(ModelConfig(**SMALL), 20, 6, seed=0, dtype=np.float64)
    assert np.abs(p["up.0.W"]).max() <= 1 / np.sqrt(20)
    assert np.abs(p["res.0.W1"]).max() <= 1 / np.sqrt(16)


CONFIGS = [
    ModelConfig(hidden_dim=16, attention_heads=2, loss="mse"),
    ModelConfig(hidden_dim=16, attention_heads=2, loss="lambda_rank"),
    ModelConfig(hidden_dim=16, backbone="lstm", loss="mse"),
    ModelConfig(hidden_dim=16, attention_heads=2, positional_encoding=True, mask_padding=True,
                layer_norm=True, loss="lambda_rank"),
]


@pytest.mark.parametrize("cfg", CONFIGS, ids=["att-mse", "att-rank", "lstm", "att-all-flags"])
@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(cfg, seed):
    errors = check_model_robust(cfg, seed)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, (worst, errors[worst])


def test_kink_detection():
    """A probe step large enough to flip ReLU gates is reported, not silently compared."""
    case = random_case(CONFIGS[0], 0)
    with pytest.raises(KinkError):
        check_model(case, h=1.0)
