import pytest

from schedcost.config import RunConfig, parse_config_text, parse_value
from schedcost.errors import ConfigError


def test_defaults_match_module_defaults():
    cfg = RunConfig.build()
    assert cfg.feature.sequence_length == 25 and cfg.feature.embedding_size == 22
    assert cfg.search.measure_per_round == 10


def test_parse_value():
    assert parse_value("true") is True and parse_value("3") == 3
    assert parse_value("1e-3") == 1e-3 and parse_value(" lambda_rank ") == "lambda_rank"


def test_layers_override_in_order():
    text = "# c\nmodel.hidden_dim = 64\ntrain.lr = 0.01\n\nsplit.holdout_workloads = net3, net4\n"
    cfg = RunConfig.build(parse_config_text(text), {"model.hidden_dim": "32"}, {"train.epochs": None})
    assert cfg.model.hidden_dim == 32 and cfg.train.lr == 0.01
    assert cfg.split.holdout_workloads == ("net3", "net4")


def test_int_promoted_for_float_fields():
    cfg = RunConfig.build({"train.lr": "1"})
    assert isinstance(cfg.train.lr, float)


def test_text_round_trip():
    cfg = RunConfig.build({"model.hidden_dim": "48", "split.holdout_workloads": "a,b",
                           "synthetic.hardware": "x, y"})
    again = RunConfig.build(parse_config_text(cfg.to_text()))
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("text", ["model.hidden_dim 3", "nosuch.key = 1", "hidden_dim = 3"])
def test_bad_lines_rejected(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_unknown_field_rejected():
    with pytest.raises(ConfigError):
        RunConfig.build({"model.hiddn_dim": "3"})
