#!/usr/bin/env python3
"""Tests for the command-line entry point."""

import numpy as np
import pytest

from codedwave.beamform import PolarGrid
from codedwave.cli import build_parser, main
from codedwave.metrics import DepthCurve, write_depth_curve
from codedwave.rfio import read_pgm, write_image


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(
        "[geometry]\nn_elements = 8\n"
        "[phantom]\npreset = vertical_pins\n"
        "[imaging]\nmax_depth_mm = 12\nhalf_angle = 20\nangle_step = 2\ndecimation = 8\npixel_mm = 0.2\n"
        f"[output]\ndirectory = {tmp_path / 'run'}\n"
    )
    return path


def test_parser_knows_every_command():
    parser = build_parser()
    for command in ["simulate", "beamform", "metrics", "optimize", "render", "run"]:
        assert parser.parse_args([command]).command == command
    args = parser.parse_args(["run", "--scheme", "sta", "--code-bits", "1", "--seed", "4"])
    assert (args.scheme, args.code_bits, args.seed) == ("sta", 1, 4)


def test_compare_self_reports_zero(tmp_path, capsys):
    curve = DepthCurve((np.arange(4) + 0.5) * 1e-3, np.array([9.0, 7.0, 5.0, 2.0]))
    path = write_depth_curve(curve, tmp_path / "snr.csv")
    out = tmp_path / "diff.csv"
    assert main(["compare", str(path), str(path), "--output", str(out)]) == 0
    assert "max |diff| 0.000 dB" in capsys.readouterr().out
    assert out.read_text().splitlines()[0] == "depth_mm,value_db_first,value_db_second,diff_db"


def test_render_writes_pgm(tmp_path, rng):
    grid = PolarGrid(np.linspace(-20, 20, 21), 2e-3 + 0.1e-3 * np.arange(60))
    image, _ = write_image(rng.rayleigh(size=grid.shape), grid, tmp_path / "image.rf")
    assert main(["render", "--image", str(image), "--out", str(tmp_path)]) == 0
    gray = read_pgm(tmp_path / "image.pgm")
    assert gray.dtype == np.uint8 and gray.ndim == 2


def test_invalid_config_exits_with_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[scheme]\nname = dw\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "Configuration error" in capsys.readouterr().out


def test_missing_config_exits_with_error(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "absent.ini")]) == 1
    assert "absent.ini" in capsys.readouterr().out


def test_simulate_then_beamform(small_ini, tmp_path, capsys):
    assert main(["simulate", "--config", str(small_ini)]) == 0
    assert "Run run: 2 frames, 0 noise frames, 0 images, manifest no" in capsys.readouterr().out
    frames = sorted(p.name for p in (tmp_path / "run" / "frames").iterdir())
    assert frames == ["tx000_A.rf", "tx000_B.rf"]
    assert main(["beamform", "--config", str(small_ini)]) == 0
    assert (tmp_path / "run" / "images" / "image.rf").exists()
    assert (tmp_path / "run" / "images" / "image.pgm").exists()


def test_beamform_without_frames(small_ini, capsys):
    assert main(["beamform", "--config", str(small_ini)]) == 1
    assert "No frames found" in capsys.readouterr().out


def test_unknown_scenario(small_ini, capsys):
    assert main(["optimize", "--config", str(small_ini), "--desk", "--scenario", "nowhere"]) == 1
    assert "Unknown scenario" in capsys.readouterr().out


if __name__ == '__main__':
    pytest.main([__file__])
