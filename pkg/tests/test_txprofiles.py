#!/usr/bin/env python3
"""Tests for transmit delay profiles and sector bookkeeping."""

import math

import numpy as np
import pytest

from codedwave.txprofiles import (
    ArrayGeometry,
    TxKind,
    csf_scan_plan,
    dw_delays,
    focused_delays,
    frame_rate,
    sector_angle,
    single_element_delays,
    wavelengths,
)


def test_default_geometry_is_centred():
    geometry = ArrayGeometry()
    x = geometry.element_x
    assert x.size == 128
    assert math.isclose(x.mean(), 0.0, abs_tol=1e-15)
    assert math.isclose(geometry.aperture, 12.8e-3)
    np.testing.assert_allclose(np.diff(x), 0.1e-3)
    assert geometry.center_index == 63


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry(n_elements=0)
    with pytest.raises(ValueError):
        ArrayGeometry(pitch=-1.0)


def test_dw_delays_are_symmetric_and_non_negative():
    geometry = ArrayGeometry()
    profile = dw_delays(14e-3, geometry, 1450.0)
    assert profile.kind is TxKind.DIVERGING
    assert profile.delays.min() == 0.0
    np.testing.assert_allclose(profile.delays, profile.delays[::-1], atol=1e-18)
    # centre elements fire first, edges last
    assert np.argmin(profile.delays) in (63, 64)
    assert profile.delays[0] == profile.delays.max()


def test_dw_delay_formula():
    geometry = ArrayGeometry(n_elements=4, pitch=1e-3)
    r_v, c = 10e-3, 1500.0
    x = geometry.element_x
    raw = (np.hypot(r_v, x) - r_v) / c
    np.testing.assert_allclose(dw_delays(r_v, geometry, c).delays, raw - raw.min(), atol=1e-18)


def test_dw_rejects_non_positive_source():
    with pytest.raises(ValueError):
        dw_delays(0.0, ArrayGeometry())


def test_focused_delays_converge_on_focus():
    geometry = ArrayGeometry()
    c = 1450.0
    focus = (40e-3 * math.sin(math.radians(20.0)), 40e-3 * math.cos(math.radians(20.0)))
    profile = focused_delays(40e-3, 20.0, geometry, c)
    arrival = profile.delays + np.hypot(focus[0] - geometry.element_x, focus[1]) / c
    np.testing.assert_allclose(arrival, arrival[0], rtol=0, atol=1e-15)
    assert profile.kind is TxKind.FOCUSED


def test_focused_delays_reject_bad_inputs():
    with pytest.raises(ValueError):
        focused_delays(0.0, 0.0, ArrayGeometry())
    with pytest.raises(ValueError):
        focused_delays(40e-3, 90.0, ArrayGeometry())


def test_single_element_profile():
    geometry = ArrayGeometry(n_elements=8)
    profile = single_element_delays(3, geometry)
    assert profile.active_mask.sum() == 1
    assert profile.active_mask[3]
    assert np.all(profile.delays == 0)
    with pytest.raises(ValueError):
        single_element_delays(8, geometry)


def test_sector_angle_matches_measurement_setup():
    assert abs(sector_angle(14e-3, 12.8e-3) - 49.1) < 0.05


def test_sector_angle_shrinks_with_distance():
    angles = [sector_angle(r, 12.8e-3) for r in (10.5e-3, 14e-3, 30e-3, 50e-3)]
    assert all(b < a for a, b in zip(angles, angles[1:]))
    with pytest.raises(ValueError):
        sector_angle(0.0, 12.8e-3)


@pytest.mark.parametrize("n_tx, expected", [(2, 5000.0), (128, 78.125), (181, 55.249)])
def test_frame_rates(n_tx, expected):
    assert frame_rate(n_tx, 0.075, 1500.0) == pytest.approx(expected, rel=1e-3)


def test_frame_rate_rejects_zero():
    with pytest.raises(ValueError):
        frame_rate(0, 0.075)


def test_csf_plan_defaults():
    plan = csf_scan_plan()
    assert len(plan) == 181
    assert plan[0].steer_angle == -45.0
    assert plan[-1].steer_angle == 45.0
    assert plan[1].steer_angle - plan[0].steer_angle == pytest.approx(0.5)
    assert all(beam.focus_range == 40e-3 for beam in plan)


def test_wavelength_conversion():
    assert wavelengths(70) == pytest.approx(14e-3)
    assert wavelengths(64) == pytest.approx(12.8e-3)


if __name__ == '__main__':
    pytest.main([__file__])
