#!/usr/bin/env python3
"""Tests for the image quality measures and metric tables."""

import math

import numpy as np
import pytest

from codedwave.acoustics import Rect
from codedwave.beamform import CartesianRaster, PolarGrid
from codedwave.metrics import (
    DepthCurve,
    RoiSpec,
    cnr,
    cnr_sweep,
    compare_tables,
    mean_speckle_power,
    noise_power,
    penetration_depth,
    power_curve,
    pin_snr,
    read_depth_curve,
    read_metric_table,
    signal_strength_profile,
    snr_plus_one,
    ssr,
    write_cnr_table,
    write_depth_curve,
    write_profile,
)


@pytest.fixture
def grid():
    return PolarGrid(np.arange(-30.0, 30.5, 0.5), 10e-3 + 0.1e-3 * np.arange(201))


@pytest.fixture
def checker_raster():
    """mu 10 left of x = 3.5 mm, 21 right of it, +-2*sqrt(2) alternating by column."""
    x = np.arange(80) * 1e-4
    z = 5e-3 + np.arange(40) * 1e-4
    mu = np.where(np.arange(80) <= 35, 10.0, 21.0)
    sign = np.where(np.arange(80) % 2 == 0, 1.0, -1.0)
    values = np.tile(mu + 2 * math.sqrt(2) * sign, (40, 1))
    return CartesianRaster(values=values, x=x, z=z)


CYST = RoiSpec.rectangle(2.05e-3, 7.05e-3, 2.0e-3, 2.0e-3)
BACKGROUND = RoiSpec.rectangle(5.05e-3, 7.05e-3, 2.0e-3, 2.0e-3)


def _nearest(grid, pin):
    x, z = grid.points()
    return np.unravel_index(np.argmin(np.hypot(x - pin[0], z - pin[1])), grid.shape)


def test_constant_image_has_unit_power(grid):
    curve = power_curve([np.ones(grid.shape)], grid)
    assert not curve.in_db
    np.testing.assert_allclose(curve.values, 1.0)
    assert np.all(np.diff(curve.depths) > 0)


def test_noise_power_estimate(rng):
    narrow = PolarGrid(np.linspace(-5, 5, 101), np.arange(10e-3, 15e-3, 1450 / 160e6))
    images = [rng.normal(0.0, math.sqrt(2.0), narrow.shape) for _ in range(13)]
    curve = noise_power(images, narrow, region=Rect(-1.0, 1.0, 10.5e-3, 14.5e-3))
    assert len(curve) == 5
    np.testing.assert_allclose(curve.values, 2.0, rtol=0.05)


def test_power_curve_errors(grid):
    with pytest.raises(ValueError):
        power_curve([], grid)
    with pytest.raises(ValueError):
        power_curve([np.ones((3, 3))], grid)
    with pytest.raises(ValueError):
        power_curve([np.ones(grid.shape)], grid, region=Rect(0.0, 1e-3, 80e-3, 90e-3))


@pytest.mark.parametrize("ratio, expected", [(1.0, 3.0103), (0.0, 0.0), (100.0, 20.0432)])
def test_snr_plus_one(grid, ratio, expected):
    noise = power_curve([np.full(grid.shape, 2.0)], grid)
    speckle = np.full(grid.shape, math.sqrt(4.0 * ratio))
    curve = snr_plus_one(speckle, grid, noise)
    assert curve.in_db
    np.testing.assert_allclose(curve.values, expected, atol=1e-4)


def test_snr_plus_one_errors(grid):
    zero_noise = power_curve([np.zeros(grid.shape)], grid)
    with pytest.raises(ValueError, match="zero"):
        snr_plus_one(np.ones(grid.shape), grid, zero_noise)
    short = DepthCurve(np.array([10.5e-3]), np.array([1.0]), in_db=False)
    with pytest.raises(ValueError, match="depth axes"):
        snr_plus_one(np.ones(grid.shape), grid, short)


def test_mean_speckle_power(grid):
    image = np.full(grid.shape, 3.0)
    assert mean_speckle_power(image, grid) == pytest.approx(9.0)
    assert mean_speckle_power(image, grid, Rect(-5e-3, 5e-3, 15e-3, 20e-3)) == pytest.approx(9.0)


def test_penetration_beyond_range():
    depths = (np.arange(75) + 0.5) * 1e-3
    assert penetration_depth(DepthCurve(depths, np.full(75, 10.0))) is None


def test_penetration_crossing():
    depths = (np.arange(75) + 0.5) * 1e-3
    values = 6.0 + 0.5 * (47.0 - depths * 1e3)
    assert penetration_depth(DepthCurve(depths, values)) == pytest.approx(47.5e-3)


def test_penetration_ignores_short_dip():
    depths = (np.arange(10) + 0.5) * 1e-3
    values = np.array([20, 20, 5, 20, 20, 5, 4, 3, 2, 1], dtype=float)
    assert penetration_depth(DepthCurve(depths, values)) == pytest.approx(5.5e-3)


def test_curve_validation():
    with pytest.raises(ValueError):
        DepthCurve(np.array([1.0, 2.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        DepthCurve(np.array([2.0, 1.0]), np.array([1.0, 1.0]))


def test_cnr_of_synthetic_regions(checker_raster):
    assert cnr(checker_raster, CYST, BACKGROUND) == pytest.approx(2.75, rel=1e-9)


def test_cnr_affine_invariance(checker_raster):
    shifted = checker_raster._replace(values=3.0 * checker_raster.values - 7.0)
    assert cnr(shifted, CYST, BACKGROUND) == pytest.approx(cnr(checker_raster, CYST, BACKGROUND))


def test_cnr_identical_distributions(rng):
    x = np.arange(100) * 1e-4
    z = 5e-3 + np.arange(50) * 1e-4
    raster = CartesianRaster(values=rng.normal(30.0, 5.0, (50, 100)), x=x, z=z)
    left = RoiSpec.rectangle(2.45e-3, 7.45e-3, 4.0e-3, 4.0e-3)
    right = RoiSpec.rectangle(7.45e-3, 7.45e-3, 4.0e-3, 4.0e-3)
    assert cnr(raster, left, right) < 0.1


def test_cnr_errors(checker_raster):
    with pytest.raises(ValueError, match="overlap"):
        cnr(checker_raster, CYST, RoiSpec.rectangle(2.5e-3, 7.05e-3, 2.0e-3, 2.0e-3))
    with pytest.raises(ValueError, match="pixels"):
        cnr(checker_raster, RoiSpec.disc(2.05e-3, 7.05e-3, 0.15e-3), BACKGROUND)
    with pytest.raises(ValueError, match="beyond"):
        cnr(checker_raster, RoiSpec.disc(0.0, 7.05e-3, 2e-3), BACKGROUND)


def test_cnr_sweep_matches_single_evaluations(checker_raster):
    diameters = [0.6e-3, 1.0e-3, 2.0e-3]
    sweep = cnr_sweep(checker_raster, (2.05e-3, 7.05e-3), (5.05e-3, 7.05e-3), diameters)
    assert sweep.shape == (3,)
    np.testing.assert_allclose(sweep, 2.75, rtol=1e-9)


def test_cnr_sweep_rejects_tiny_roi(checker_raster):
    with pytest.raises(ValueError, match="pixels"):
        cnr_sweep(checker_raster, (2.05e-3, 7.05e-3), (5.05e-3, 7.05e-3), [1.0e-3, 0.15e-3])

def test_roi_must_avoid_background(checker_raster):
    values = checker_raster.values.copy()
    values[:, :5] = np.nan
    raster = checker_raster._replace(values=values)
    with pytest.raises(ValueError, match="sector"):
        RoiSpec.disc(0.85e-3, 7.05e-3, 1.6e-3).mask(raster)


def test_profile_single_bright_pin(grid):
    envelope = np.full(grid.shape, 0.1)
    pins = [(-5e-3, 20e-3), (0.0, 20e-3), (5e-3, 20e-3)]
    envelope[_nearest(grid, pins[1])] = 10.0
    profile = signal_strength_profile(envelope, grid, pins)
    np.testing.assert_allclose(profile, [-20.0, 20.0, -20.0])


def test_profile_scales_with_amplitude(rng, grid):
    envelope = rng.rayleigh(size=grid.shape)
    pins = [(0.0, 15e-3), (3e-3, 25e-3)]
    base = signal_strength_profile(envelope, grid, pins)
    np.testing.assert_allclose(signal_strength_profile(10 * envelope, grid, pins), base + 20.0)


def test_profile_rejects_pin_outside(grid):
    with pytest.raises(ValueError, match="outside"):
        signal_strength_profile(np.ones(grid.shape), grid, [(0.0, 40e-3)])


def test_pin_snr_against_flat_noise(grid):
    envelope = np.full(grid.shape, 0.1)
    pins = [(-5e-3, 20e-3), (0.0, 20e-3), (5e-3, 20e-3)]
    envelope[_nearest(grid, pins[1])] = 10.0
    noise_curve = noise_power([np.full(grid.shape, 0.5)], grid)
    offset = -10.0 * math.log10(0.25)
    np.testing.assert_allclose(pin_snr(envelope, grid, pins, noise_curve),
                               [-20.0 + offset, 20.0 + offset, -20.0 + offset])


def test_pin_snr_needs_linear_noise(grid):
    curve = DepthCurve((np.arange(40) + 0.5) * 1e-3, np.zeros(40), in_db=True)
    with pytest.raises(ValueError, match="linear"):
        pin_snr(np.ones(grid.shape), grid, [(0.0, 20e-3)], curve)

@pytest.mark.parametrize("amplitude, expected", [(1.0, 0.0), (10.0, 20.0)])
def test_ssr(grid, amplitude, expected):
    pin = (0.0, 20e-3)
    envelope = np.ones(grid.shape)
    envelope[_nearest(grid, pin)] = amplitude
    assert ssr(envelope, grid, pin) == pytest.approx(expected, abs=1e-9)


def test_ssr_annulus_must_fit(grid):
    with pytest.raises(ValueError, match="leaves"):
        ssr(np.ones(grid.shape), grid, (0.0, 12e-3))


def test_depth_curve_csv(tmp_path):
    curve = DepthCurve((np.arange(5) + 0.5) * 1e-3, np.array([9.0, 8.5, 7.25, 6.0, 3.0]))
    path = write_depth_curve(curve, tmp_path / "snr.csv")
    assert path.read_text().splitlines()[0] == "depth_mm,value_db"
    loaded = read_depth_curve(path)
    np.testing.assert_allclose(loaded.depths, curve.depths)
    np.testing.assert_allclose(loaded.values, curve.values)


def test_profile_csv_and_self_compare(tmp_path):
    pins = [(-4e-3, 20e-3), (0.0, 20e-3), (4e-3, 20e-3)]
    path = write_profile([-3.0, 0.0, -2.5], pins, tmp_path / "profile.csv")
    table = read_metric_table(path)
    assert list(table.columns) == ["pin_index", "x_mm", "value_db"]
    diff = compare_tables(path, path)
    assert len(diff) == 3
    assert np.all(diff["diff_db"] == 0.0)


def test_cnr_table_csv(tmp_path):
    path = write_cnr_table("roi_mm", [1.0, 2.0], [1.25, 2.5], tmp_path / "cnr.csv")
    lines = path.read_text().splitlines()
    assert lines == ["roi_mm,cnr", "1,1.25", "2,2.5"]

def test_compare_reports_differences(tmp_path):
    depths = (np.arange(3) + 0.5) * 1e-3
    first = write_depth_curve(DepthCurve(depths, np.array([1.0, 2.0, 3.0])), tmp_path / "a.csv")
    second = write_depth_curve(DepthCurve(depths, np.array([1.0, 2.5, 2.0])), tmp_path / "b.csv")
    np.testing.assert_allclose(compare_tables(first, second)["diff_db"], [0.0, 0.5, -1.0])


def test_compare_rejects_mixed_layouts(tmp_path):
    curve = write_depth_curve(DepthCurve(np.array([1e-3]), np.array([1.0])), tmp_path / "c.csv")
    profile = write_profile([1.0], [(0.0, 20e-3)], tmp_path / "p.csv")
    with pytest.raises(ValueError, match="layouts"):
        compare_tables(curve, profile)


def test_read_metric_table_requires_values(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_metric_table(path)


if __name__ == '__main__':
    pytest.main([__file__])
