import pytest
import yaml

from evmarket.config import (PolicyBinding, QLearnerConfig, SimConfig, StationSpec,
                             UtilityParams, config_from_dict, config_to_dict, dump_config,
                             load_config)
from evmarket.errors import ConfigError


def base_dict():
    return {"schema_version": 1, "name": "t", "arrival_rate_per_hour": 5,
            "stations": [{"id": 1, "location_km": 200,
                          "policy": {"kind": "qlearn", "info_set": "2.2"}},
                         {"id": 2, "location_km": 400,
                          "policy": {"kind": "fixed", "price": 0.52}}],
            "learner": {"epsilon0": 0.15}, "utility": {"variant": "eq8"}, "train_days": 3}


def test_parse_round_trip(tmp_path):
    cfg, learner, extras = config_from_dict(base_dict())
    assert cfg.utility_params.variant == "eq8"
    assert learner.epsilon0 == 0.15
    assert extras["train_days"] == 3
    assert cfg.station_specs[0].policy.info_set == "2.2"
    path = tmp_path / "s.yaml"
    dump_config(path, cfg, learner, 3)
    again = load_config(path)
    assert again[0] == cfg and again[1] == learner and again[2] == extras


def test_schema_version_required():
    d = base_dict()
    d["schema_version"] = 2
    with pytest.raises(ConfigError):
        config_from_dict(d)
    del d["schema_version"]
    with pytest.raises(ConfigError):
        config_from_dict(d)


@pytest.mark.parametrize("where", ["top", "learner", "station", "policy", "ev"])
def test_unknown_keys_rejected(where):
    d = base_dict()
    if where == "top":
        d["bogus"] = 1
    elif where == "learner":
        d["learner"]["bogus"] = 1
    elif where == "station":
        d["stations"][0]["bogus"] = 1
    elif where == "policy":
        d["stations"][0]["policy"]["bogus"] = 1
    else:
        d["ev"] = {"bogus": 1}
    with pytest.raises(ConfigError):
        config_from_dict(d)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        QLearnerConfig(discount=1.5)
    with pytest.raises(ConfigError):
        PolicyBinding("fixed")
    with pytest.raises(ConfigError):
        PolicyBinding("magic")
    with pytest.raises(ConfigError):
        SimConfig((StationSpec(1, 600.0),))
    with pytest.raises(ConfigError):
        SimConfig((StationSpec(1, 100.0), StationSpec(1, 200.0)))
    with pytest.raises(ConfigError):
        UtilityParams(k_ch_hours=0)


def test_bad_yaml(tmp_path):
    p = tmp_path / "x.yaml"
    p.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("a: [unclosed")
    with pytest.raises(ConfigError):
        load_config(p)


def test_default_periods():
    assert PolicyBinding("bertrand").period == 30
    assert PolicyBinding("random").period == 30
    assert PolicyBinding("qlearn").period == 1


def test_dict_is_yaml_safe():
    cfg, learner, _ = config_from_dict(base_dict())
    yaml.safe_dump(config_to_dict(cfg, learner))
