import json
from pathlib import Path

import pytest

from src.config import CODE_VERSION, config_from_mapping, parse_config
from src.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_defaults_are_filled_and_recorded(base_config):
    config = config_from_mapping(base_config)
    assert config.name == "unit"
    assert config.engine["trace_method"] == "dense"
    assert config.engine["kpm_order"] == 128
    assert config.engine["probes"] == 32
    assert config.hs["order"] == 4
    assert config.sweep["p_list"] == [8, 16, 32]
    assert config.model["box"] is None
    assert "engine.kpm_order" in config.defaults_applied
    assert "potential" in config.defaults_applied
    assert "model.box" not in config.defaults_applied


def test_builders(base_config):
    config = config_from_mapping(base_config)
    geom = config.build_geometry()
    assert geom.dim == 2
    assert config.build_field(geom).flux_integers == {(0, 1): 1}
    assert config.build_potential(geom).is_zero
    assert config.build_phi().family == "exp"
    assert config.build_phi({"family": "zero"}).decay == "zero"


def test_unknown_keys_are_rejected(base_config):
    with pytest.raises(ConfigError, match="unknown key phii"):
        config_from_mapping({**base_config, "phii": {}})
    with pytest.raises(ConfigError, match="unknown key engine.speed"):
        config_from_mapping({**base_config, "engine": {"speed": 1}})
    with pytest.raises(ConfigError, match="unknown key geometry.shape"):
        config_from_mapping({**base_config, "geometry": {"d": 2, "shape": "square"}})


def test_missing_blocks(base_config):
    raw = dict(base_config)
    del raw["phi"]
    with pytest.raises(ConfigError, match="missing required block phi"):
        config_from_mapping(raw)
    with pytest.raises(ConfigError, match="geometry.d"):
        config_from_mapping({**base_config, "geometry": {"lengths": [1.0, 1.0]}})


def test_type_checks(base_config):
    with pytest.raises(ConfigError):
        config_from_mapping({**base_config, "engine": {"kpm_order": "128"}})
    with pytest.raises(ConfigError):
        config_from_mapping({**base_config, "engine": {"probes": True}})
    config = config_from_mapping({**base_config, "sweep": {"resolution": 12}})
    assert config.sweep["resolution"] == 12


def test_domain_validation_is_up_front(base_config):
    with pytest.raises(ConfigError):
        config_from_mapping({**base_config, "field": {"flux.12": 0.5}})
    with pytest.raises(ConfigError):
        config_from_mapping({**base_config, "phi": {"family": "lorentzian"}})
    with pytest.raises(ConfigError):
        config_from_mapping({**base_config, "sweep": {"p_list": [16, 8]}})
    with pytest.raises(ConfigError):
        config_from_mapping({**base_config, "sweep": {"p_list": [0, 8]}})
    with pytest.raises(ConfigError):
        config_from_mapping({**base_config, "engine": {"trace_method": "lanczos"}})
    with pytest.raises(ConfigError):
        config_from_mapping({**base_config, "hs": {"order": 1}})


def test_lengths_default_to_unit_torus(base_config):
    config = config_from_mapping({**base_config, "geometry": {"d": 3}, "field": {}})
    assert config.geometry["lengths"] == [1.0, 1.0, 1.0]
    assert "geometry.lengths" in config.defaults_applied


def test_output_and_cache_from_environment(base_config, monkeypatch):
    monkeypatch.setenv("SCBL_OUT", "/tmp/scbl-out")
    monkeypatch.setenv("SCBL_CACHE", "/tmp/scbl-cache")
    config = config_from_mapping(base_config)
    assert config.output_dir == "/tmp/scbl-out"
    assert config.cache_dir == "/tmp/scbl-cache"
    explicit = config_from_mapping({**base_config, "output": "elsewhere"})
    assert explicit.output_dir == "elsewhere"


def test_cache_key(base_config):
    config = config_from_mapping(base_config)
    key = config.cache_key("trace_sweep", "field", "phi", extra={"p": 8})
    assert len(key) == 64
    assert key == config_from_mapping(base_config).cache_key("trace_sweep", "field", "phi", extra={"p": 8})
    assert key != config.cache_key("trace_sweep", "field", "phi", extra={"p": 16})
    assert key != config.cache_key("trace_sweep", "field", extra={"p": 8})
    other = config_from_mapping({**base_config, "phi": {"family": "exp", "t": 2.0}})
    assert key != other.cache_key("trace_sweep", "field", "phi", extra={"p": 8})
    assert CODE_VERSION.startswith("scbl-")


def test_parse_config_file(tmp_path, base_config):
    raw = dict(base_config)
    del raw["name"]
    path = tmp_path / "my_run.json"
    path.write_text(json.dumps(raw))
    config = parse_config(path)
    assert config.name == "my_run"
    assert config.source == str(path)


def test_parse_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[]")
    with pytest.raises(ConfigError):
        parse_config(listed)


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_reference_configs_parse(path):
    config = parse_config(path)
    assert config.name == path.stem
