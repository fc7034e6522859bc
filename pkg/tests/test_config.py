import json

import pytest

from teach.orchestrator.config import ConfigError, RunConfig, load_config


def test_defaults_validate_for_gen_data():
    cfg = load_config(None, {"mode": "gen-data"})
    cfg.validate()
    assert cfg.seed == 0 and cfg.broker == "embedded"


def test_run_mode_requires_models(tmp_path):
    cfg = load_config(None, {"mode": "run"})
    with pytest.raises(ConfigError):
        cfg.validate()


def test_fixed_profile_and_agent_mutually_exclusive(tmp_path):
    esn = tmp_path / "esn.json"
    esn.write_text("{}")
    agent = tmp_path / "agent.json"
    agent.write_text("{}")
    cfg = load_config(None, {"mode": "run", "esn_path": str(esn),
                             "agent_path": str(agent), "fixed_profile": "normal"})
    with pytest.raises(ConfigError, match="mutually exclusive"):
        cfg.validate()


def test_missing_referenced_file(tmp_path):
    cfg = load_config(None, {"mode": "run", "esn_path": str(tmp_path / "nope.json"),
                             "fixed_profile": "normal"})
    with pytest.raises(ConfigError, match="does not exist"):
        cfg.validate()


def test_broker_url_parsing():
    assert RunConfig(broker="embedded").broker_endpoint() is None
    assert RunConfig(broker="tcp://host:1883").broker_endpoint() == ("host", 1883)
    with pytest.raises(ConfigError):
        RunConfig(broker="mqtt://x").broker_endpoint()
    with pytest.raises(ConfigError):
        RunConfig(broker="tcp://noport").broker_endpoint()


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"mode": "run", "tpyo": 1}))
    with pytest.raises(ConfigError, match="tpyo"):
        load_config(path)


def test_config_file_with_cli_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "seed": 5,
        "route": {"n_segments": 10, "kappa_range": [0.0, 0.01]},
        "driver": {"tau_up": 8.0},
        "esn": {"n_reservoir": 40},
        "agent": {"hidden": 8, "beta": 0.5},
        "profiles": {"normal": {"v_max": 22.0, "a_max": 2.5,
                                "a_brake_max": 4.5, "a_lat_max": 2.6}},
    }))
    cfg = load_config(path, {"mode": "gen-data", "seed": 9})
    assert cfg.seed == 9  # CLI wins
    assert cfg.route.n_segments == 10
    assert cfg.driver.tau_up == 8.0
    assert cfg.esn.n_reservoir == 40
    assert cfg.agent.beta == 0.5
    assert cfg.profiles["normal"].v_max == 22.0
    cfg.validate()


def test_unordered_profiles_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "profiles": {"conservative": {"v_max": 50.0, "a_max": 1.5,
                                      "a_brake_max": 2.5, "a_lat_max": 1.5}}}))
    cfg = load_config(path, {"mode": "gen-data"})
    with pytest.raises(Exception, match="ordered"):
        cfg.validate()


def test_invalid_mode_rejected():
    with pytest.raises(ConfigError, match="mode"):
        load_config(None, {"mode": "fly"}).validate()
