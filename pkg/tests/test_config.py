import json

import numpy as np
import pytest

from sabground.config import ConfigError, RunConfig, from_dict, load_config


def test_defaults_match_component_defaults():
    cfg = RunConfig()
    assert cfg.optim.lr == 1e-4 and cfg.optim.weight_decay == 0.05 and cfg.optim.power == 0.9
    assert cfg.loss.lam == 0.5 and cfg.loss.matrix_epsilon == 1e-3
    assert cfg.train.batch_size == 16 and cfg.train.eval_slice == 64
    mc = cfg.model_config()
    assert mc.scales == (32, 16, 8, 4) and mc.sab.gate == "softmax" and mc.sab.expansion


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key model.heads"):
        from_dict({"model": {"heads": 4}})


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown config section"):
        from_dict({"scheduler": {}})


@pytest.mark.parametrize("payload", [
    {"optim": {"lr": "fast"}},
    {"model": {"expansion": 1}},
    {"train": {"batch_size": 2.5}},
    {"model": {"scales": [32, 12]}},
    {"model": {"gate": "tanh"}},
    {"train": {"dtype": "float16"}},
    {"loss": {"lam": 1.5}},
])
def test_invalid_values_rejected(payload):
    with pytest.raises(ConfigError):
        from_dict(payload)


def test_json_round_trip(tmp_path):
    cfg = RunConfig().replace(model={"scales": [32, 8]}, optim={"lr": 3e-4})
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    again = load_config(path, env={})
    assert again == cfg and again.model.scales == (32, 8)


def test_seed_env_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"seed": 4}}))
    assert load_config(path, env={}).train.seed == 4
    assert load_config(path, env={"SAB_SEED": "11"}).train.seed == 11


def test_frozen():
    cfg = RunConfig()
    with pytest.raises(AttributeError):
        cfg.optim.lr = 1.0


def test_dtype_property():
    assert RunConfig().replace(train={"dtype": "float64"}).np_dtype is np.float64
