#!/usr/bin/env python3
"""Tests for configuration parsing, validation and command-line overrides."""

import pytest

from codedwave.config import (
    DEFAULT_RV_MM,
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    format_config,
    parse_config,
    parse_config_text,
    validate,
)


def test_empty_file_gives_defaults():
    config = parse_config_text("")
    assert config == ExperimentConfig()
    assert config.scheme.name == "dw"
    assert config.r_v == pytest.approx(DEFAULT_RV_MM * 1e-3)
    assert config.code_bits == 8
    assert config.sample_rate == 80e6
    assert config.array_geometry().n_elements == 128


def test_code_bits_default_follows_scheme():
    config = parse_config_text("[scheme]\nname = sta\n")
    assert config.code_bits == 1
    assert config.scheme.rv_mm is None


def test_dw_without_rv_is_rejected():
    with pytest.raises(ConfigError, match="requires rv_mm"):
        parse_config_text("[scheme]\nname = dw\n")


def test_unsupported_code_length():
    with pytest.raises(ConfigError) as ctx:
        parse_config_text("[excitation]\ncode_bits = 5\n")
    assert len(ctx.value.violations) == 1
    assert "code_bits" in ctx.value.violations[0]


def test_all_problems_are_collected():
    text = "[geometry]\nn_elements = 0\ncolour = red\n[bogus]\na = 1\n[medium]\nsound_speed = fast\n"
    with pytest.raises(ConfigError) as ctx:
        parse_config_text(text, "bad.ini")
    violations = ctx.value.violations
    assert ctx.value.source == "bad.ini"
    assert any("unknown key 'colour'" in v for v in violations)
    assert any("unknown section [bogus]" in v for v in violations)
    assert any("medium.sound_speed" in v for v in violations)
    assert any("n_elements must be positive" in v for v in violations)


def test_cnr_sweep_settings():
    config = parse_config_text("[phantom]\npreset = speckle\ncyst_diameter_mm = 4\npositions = 11\n")
    assert config.phantom.positions == 11
    assert config.phantom.roi_step_mm == pytest.approx(0.5)
    with pytest.raises(ConfigError) as ctx:
        parse_config_text("[phantom]\npositions = 0\nroi_step_mm = -1\n")
    assert any("phantom.positions must be positive" in v for v in ctx.value.violations)
    assert any("roi_step_mm" in v for v in ctx.value.violations)

def test_rv_range():
    assert validate(ExperimentConfig()) == []
    with pytest.raises(ConfigError, match=r"\(0, 100\]"):
        parse_config_text("[scheme]\nname = dw\nrv_mm = 150\n")


def test_rv_is_dw_only():
    with pytest.raises(ConfigError, match="does not use rv_mm"):
        parse_config_text("[scheme]\nname = csf\nrv_mm = 10\n")


def test_gaussian_csf_needs_pulse():
    with pytest.raises(ConfigError, match="gaussian"):
        parse_config_text("[scheme]\nname = csf\n[excitation]\ncode_bits = 8\n")
    config = parse_config_text("[scheme]\nname = csf\ncsf_filter = matched\n[excitation]\ncode_bits = 8\n")
    assert config.code_bits == 8


def test_file_phantom_needs_path():
    with pytest.raises(ConfigError, match="phantom.file"):
        parse_config_text("[phantom]\npreset = file\n")


def test_boolean_values():
    assert parse_config_text("[imaging]\ncompensate = no\n").imaging.compensate is False
    with pytest.raises(ConfigError, match="not a boolean"):
        parse_config_text("[imaging]\ncompensate = maybe\n")


def test_format_round_trip():
    config = parse_config_text("[scheme]\nname = sta\n[noise]\npower = 100\nrealizations = 13\n")
    assert parse_config_text(format_config(config)) == config


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[output]\nseed = 7\ndirectory = out\n")
    config = parse_config(path)
    assert config.seed == 7
    assert config.output.directory == "out"
    with pytest.raises(FileNotFoundError, match="missing.ini"):
        parse_config(tmp_path / "missing.ini")


def test_overrides():
    config = apply_overrides(ExperimentConfig(), scheme="sta", seed=3, out="elsewhere")
    assert config.scheme.name == "sta"
    assert config.scheme.rv_mm is None
    assert config.seed == 3
    assert config.output.directory == "elsewhere"
    back = apply_overrides(config, scheme="dw", rv_mm=21.0)
    assert back.r_v == pytest.approx(21e-3)


def test_invalid_override():
    with pytest.raises(ConfigError) as ctx:
        apply_overrides(ExperimentConfig(), code_bits=3)
    assert ctx.value.source == "command line"


def test_r_v_unavailable_without_source():
    config = apply_overrides(ExperimentConfig(), scheme="sta")
    with pytest.raises(ValueError):
        _ = config.r_v


if __name__ == '__main__':
    pytest.main([__file__])
