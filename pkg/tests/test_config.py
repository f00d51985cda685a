import json

import pytest

from compcausal.config import TrainConfig, config_from_dict, load_config, merge
from compcausal.errors import ConfigError


def test_defaults():
    config = config_from_dict({})
    assert config.batch_size == 2048 and config.max_epochs == 300
    assert config.optimizer.kind == "sgd_nesterov" and config.optimizer.learning_rate == 3e-4
    assert config.loss.lambda_oh == config.loss.lambda_rep == 0.1
    assert config.arch.d_h == 150


@pytest.mark.parametrize("payload", [
    {"epochs": 3},
    {"loss": {"lambda_xyz": 1.0}},
    {"data": {"ratios": "5:5"}},
    {"optimizer": {"lr": 0.1}},
])
def test_unknown_keys_rejected(payload):
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict(payload)


@pytest.mark.parametrize("payload", [
    {"method": "attop"},
    {"schedule": "alternating", "method": "visprod"},
    {"schedule": "alternating", "data": {"source": "files", "path": "d"}},
    {"batch_size": 1},
    {"max_epochs": 0},
    {"early_stop": "seen"},
    {"data": {"source": "files"}},
    {"optimizer": {"kind": "rmsprop"}},
])
def test_invalid_combinations(payload):
    with pytest.raises(ConfigError):
        config_from_dict(payload)


def test_no_indep_zeroes_independence_weights():
    weights = config_from_dict({"method": "causal_no_indep", "loss": {"lambda_oh": 5.0}}).effective_weights()
    assert weights.lambda_oh == weights.lambda_rep == 0.0


def test_round_trip_through_dict():
    config = config_from_dict({"method": "le", "optimizer_phase2": {"learning_rate": 0.1}, "data": {"ratio": "2:8"}})
    assert config_from_dict(json.loads(json.dumps(config.to_dict()))) == config


def test_load_config_reports_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{\"method\": ")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)


def test_merge_is_recursive():
    assert merge({"a": {"b": 1, "c": 2}, "d": 3}, {"a": {"b": 5}}) == {"a": {"b": 5, "c": 2}, "d": 3}


def test_replace_keeps_validation():
    with pytest.raises(ConfigError):
        TrainConfig().replace(batch_size=0)
