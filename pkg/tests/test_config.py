"""Config loading, validation, and hashing."""

import dataclasses
import json

import pytest

from mutag.config import (ConfigError, canonical_json, config_dict, config_hash,
                          load_config, paper_defaults, validate_config,
                          write_reference_config)


def test_defaults_validate():
    validate_config(paper_defaults())


def test_reference_values():
    cfg = paper_defaults()
    assert cfg.geometry.si_half_thickness_cm == pytest.approx(0.02625)
    assert cfg.sources.muon_flux_per_cm2_s == pytest.approx(0.01389)
    assert cfg.sources.gamma_flux_per_cm2_s == pytest.approx(13.5)
    assert cfg.daq.sampling_rate_hz == 1e5
    assert cfg.daq.record_samples == 2400
    assert cfg.daq.tau_rise_us == pytest.approx(50.0)
    assert cfg.daq.tau_decay_us == pytest.approx(500.0)
    assert cfg.analysis.coincidence_window_us == pytest.approx(170.0)
    assert cfg.analysis.veto_windows_ms == [1.0, 5.0, 25.0]


def test_load_none_gives_defaults():
    assert load_config(None) == paper_defaults()


def test_load_partial_override(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"seed": 99, "daq": {"white_noise_rms": 2.5}}))
    cfg = load_config(str(p))
    assert cfg.seed == 99
    assert cfg.daq.white_noise_rms == 2.5
    # untouched sections keep their defaults
    assert cfg.geometry == paper_defaults().geometry


def test_load_yaml(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("daq:\n  record_samples: 1200\n")
    assert load_config(str(p)).daq.record_samples == 1200


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"daq": {"no_such_knob": 1}}))
    with pytest.raises(ConfigError, match="no_such_knob"):
        load_config(str(p))


@pytest.mark.parametrize("override", [
    {"geometry": {"si_half_thickness_cm": -1.0}},
    {"daq": {"record_samples": 0}},
    {"daq": {"tau_rise_us": 500.0, "tau_decay_us": 50.0}},
    {"analysis": {"sideband_low_us": -100.0, "sideband_high_us": -200.0}},
])
def test_invalid_values_rejected(tmp_path, override):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(override))
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_hash_stable_and_sensitive():
    cfg = paper_defaults()
    assert config_hash(cfg) == config_hash(paper_defaults())
    other = dataclasses.replace(cfg, seed=cfg.seed + 1)
    assert config_hash(other) != config_hash(cfg)


def test_canonical_json_envelope():
    cfg = paper_defaults()
    payload = json.loads(canonical_json(cfg))
    assert payload["config"] == config_dict(cfg)
    assert "schema_version" in payload


def test_reference_config_round_trips(tmp_path):
    p = tmp_path / "reference.yaml"
    write_reference_config(str(p))
    assert load_config(str(p)) == paper_defaults()
