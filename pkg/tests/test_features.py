import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from schedcost.errors import ConfigError, ValidationError
from schedcost.features import (
    FeatureConfig, Featurizer, NormalizationStats, TokenTable, apply_normalization,
    build_token_table, decode_features, embed_primitive, extract_features, fit_normalization,
)
from schedcost.primitives import Primitive, PrimitiveTypeRegistry, make_sequence

from conftest import primitives

REG3 = PrimitiveTypeRegistry(("SP", "RE", "FU"))
CFG3 = FeatureConfig(num_types=3, sequence_length=4, embedding_size=8)
TT = TokenTable({"i0": 2, "i1": 3}, frozen=True)


def test_config_invariants():
    with pytest.raises(ConfigError):
        FeatureConfig(num_types=14, embedding_size=14)
    with pytest.raises(ConfigError):
        FeatureConfig(sequence_length=0)
    assert FeatureConfig().shape == (25, 22)


def test_embed_numbers_names_and_crop():
    sp = Primitive(0, (4.0, 8.0))
    re = Primitive(1, ("i0",))
    fu = Primitive(2, tuple(float(v) for v in range(1, 7)))
    assert embed_primitive(sp, CFG3, TT).tolist() == [1, 0, 0, 4, 8, 0, 0, 0]
    assert embed_primitive(re, CFG3, TT).tolist() == [0, 1, 0, 2, 0, 0, 0, 0]
    assert embed_primitive(fu, CFG3, TT).tolist() == [0, 0, 1, 1, 2, 3, 4, 5]


def test_crop_counter():
    from schedcost.features import CropStats
    stats = CropStats()
    embed_primitive(Primitive(2, tuple(float(v) for v in range(7))), CFG3, TT, stats)
    assert stats.cropped_args == 2


def test_pad_and_crop_rows():
    two = make_sequence([("SP", [1]), ("RE", ["i1"])], REG3)
    m = extract_features(two, CFG3, TT)
    assert m.shape == (4, 8) and not m[2:].any() and m[1, 3] == 3
    five = make_sequence([("SP", [v]) for v in range(1, 6)], REG3)
    m5 = extract_features(five, CFG3, TT)
    assert m5[:, 3].tolist() == [1, 2, 3, 4]


def test_extract_is_deterministic():
    seq = make_sequence([("SP", ["i0", 3.5]), ("FU", [1, 2])], REG3)
    assert extract_features(seq, CFG3, TT).tobytes() == extract_features(seq, CFG3, TT).tobytes()


def test_empty_sequence_rejected():
    with pytest.raises(ValidationError):
        extract_features((), CFG3, TT)


def test_token_table_first_seen_and_unknown():
    seqs = [make_sequence([("RE", ["i0", "i1", "i0"])], REG3)]
    tt = build_token_table(seqs)
    assert tt.tokens == {"i0": 2, "i1": 3}
    assert tt.lookup("zz") == 1 and tt.add("zz") == 1  # frozen
    assert build_token_table([]).tokens == {}


def test_normalization_examples():
    col = np.array([[[0.0, 1.0, 0.0]], [[4.0, 0.0, 0.0]], [[8.0, 1.0, 0.0]]])
    stats = fit_normalization(col)
    assert stats.scales.tolist() == [8.0, 1.0, 1.0]
    out = apply_normalization(col, stats)
    assert out[1, 0, 0] == 0.5
    assert out[:, 0, 1].tolist() == [1.0, 0.0, 1.0]
    assert not out[:, 0, 2].any()
    # not idempotent: applying twice rescales twice
    assert apply_normalization(out, stats)[1, 0, 0] == 0.0625


def test_normalization_length_mismatch():
    with pytest.raises(ConfigError):
        apply_normalization(np.zeros((1, 2, 5)), NormalizationStats(np.ones(4)))
    with pytest.raises(ConfigError):
        NormalizationStats(np.array([1.0, 0.0]))


@given(st.lists(primitives, min_size=1, max_size=100).map(tuple))
def test_shape_invariant(seq):
    cfg = FeatureConfig()
    m = extract_features(seq, cfg, TokenTable())
    assert m.shape == (25, 22)
    assert not m[len(seq):].any()


@given(st.integers(0, 13), st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.data())
def test_synonym_distance(type_id, args, data):
    """Same type, one numeric arg changed: distance equals the normalized arg change."""
    cfg = FeatureConfig()
    j = data.draw(st.integers(0, len(args) - 1))
    new = data.draw(st.floats(-1e3, 1e3))
    a = Primitive(type_id, tuple(args))
    b = Primitive(type_id, tuple(args[:j]) + (new,) + tuple(args[j + 1:]))
    scales = np.full(cfg.embedding_size, 1.0)
    scales[cfg.num_types + j] = 1000.0
    stats = NormalizationStats(scales)
    ea = apply_normalization(embed_primitive(a, cfg, TokenTable()), stats)
    eb = apply_normalization(embed_primitive(b, cfg, TokenTable()), stats)
    assert np.linalg.norm(ea - eb) == pytest.approx(abs(args[j] - new) / 1000.0, abs=1e-12)


@given(st.integers(0, 13), st.integers(0, 13))
def test_different_types_differ_in_two_onehot_coords(t1, t2):
    cfg = FeatureConfig()
    ea = embed_primitive(Primitive(t1, (1.0,)), cfg, TokenTable())
    eb = embed_primitive(Primitive(t2, (1.0,)), cfg, TokenTable())
    diff = np.count_nonzero(ea[:cfg.num_types] != eb[:cfg.num_types])
    assert diff == (0 if t1 == t2 else 2)


def crop_safe_sequences(cfg):
    arg = st.one_of(st.sampled_from(["i0", "j1", "k.2", "ax"]),
                    st.floats(-1e6, 1e6).filter(lambda v: v != 0))
    prim = st.builds(Primitive, st.integers(0, cfg.num_types - 1),
                     st.lists(arg, max_size=cfg.arg_slots).map(tuple))
    return st.lists(prim, min_size=1, max_size=cfg.sequence_length).map(tuple)


@given(crop_safe_sequences(FeatureConfig()))
def test_inverse_map_recovers_crop_safe_sequences(seq):
    cfg = FeatureConfig()
    tt = build_token_table([seq])
    m = extract_features(seq, cfg, tt)
    kinds = [["name" if isinstance(a, str) else "num" for a in p.args] for p in seq]
    assert decode_features(m, cfg, tt, kinds) == [(p.type_id, p.args) for p in seq]


def test_featurizer_round_trip_dict():
    seqs = [make_sequence([("SP", ["i0", 4]), ("FU", [2])], REG3),
            make_sequence([("RE", ["i1", 7])], REG3)]
    fz = Featurizer(REG3, CFG3).fit(seqs)
    back = Featurizer.from_dict(fz.to_dict())
    assert back.digest() == fz.digest()
    assert np.array_equal(back.transform(seqs), fz.transform(seqs))
    assert fz.transform(seqs).dtype == np.float32


def test_featurizer_requires_fit():
    with pytest.raises(ConfigError):
        Featurizer(REG3, CFG3).transform([make_sequence([("SP", [1])], REG3)])
