#!/usr/bin/env python3
"""Tests for the delay-and-sum beamformers and B-mode rendering."""

import numpy as np
import pytest

from codedwave.acoustics import Medium, Phantom, RFFrame, element_impulse_response, simulate_rx
from codedwave.beamform import (
    PolarGrid,
    apply_gain,
    das_csf,
    das_dw,
    das_sta,
    envelope,
    gaussian_bandpass,
    log_compress,
    render,
    scan_convert,
    to_gray,
)
from codedwave.codes import pulse_excitation
from codedwave.receiver import build_banks, correlate_transmissions
from codedwave.txprofiles import (
    ArrayGeometry,
    csf_scan_plan,
    dw_delays,
    focused_delays,
    single_element_delays,
)

C = 1450.0
FS = 80e6
TARGET_Z = 30e-3
GEOMETRY = ArrayGeometry(n_elements=16)


@pytest.fixture(scope="module")
def point_setup():
    medium = Medium(sound_speed=C, attenuation=0.0)
    response = element_impulse_response(7.5e6, 0.70, FS)
    excitation = pulse_excitation()
    banks = build_banks(excitation, GEOMETRY, medium, response)
    phantom = Phantom(np.array([0.0]), np.array([TARGET_Z]), np.array([1.0]), medium)

    def acquire(profile):
        frame = simulate_rx(excitation.waveform_a, profile, phantom, GEOMETRY, response=response,
                            max_depth=35e-3, progress=False)
        return correlate_transmissions({"A": frame}, banks, C).analytic()

    return acquire


@pytest.fixture
def target_grid():
    step = C / (2 * FS)
    return PolarGrid(np.linspace(-10, 10, 41), np.arange(28e-3, 32e-3, step))


def _peak(env, grid):
    a, r = np.unravel_index(np.argmax(env), env.shape)
    return grid.angles[a], grid.ranges[r]


def _assert_on_target(env, grid):
    angle, rng_ = _peak(env, grid)
    assert abs(angle) <= 0.5 + 1e-9
    assert abs(rng_ - TARGET_Z) <= 3 * grid.range_step


def test_dw_locates_point_target(point_setup, target_grid):
    r_v = 5e-3
    mf = point_setup(dw_delays(r_v, GEOMETRY, C))
    env = envelope(das_dw(mf, r_v, target_grid, GEOMETRY, C))
    _assert_on_target(env, target_grid)


def test_sta_locates_point_target(point_setup, target_grid):
    events = [point_setup(single_element_delays(j, GEOMETRY)) for j in range(GEOMETRY.n_elements)]
    env = envelope(das_sta(events, target_grid, GEOMETRY, C, progress=False))
    _assert_on_target(env, target_grid)


def test_csf_locates_point_target(point_setup):
    plan = csf_scan_plan(GEOMETRY, n_beams=21, half_angle=10.0, focus_range=TARGET_Z)
    frames = [point_setup(focused_delays(b.focus_range, b.steer_angle, GEOMETRY, C)) for b in plan]
    grid = PolarGrid([b.steer_angle for b in plan], np.arange(28e-3, 32e-3, C / (2 * FS)))
    env = envelope(das_csf(frames, plan, grid.ranges, GEOMETRY, C, bandpass=None, progress=False))
    assert env.shape == grid.shape
    angle, rng_ = _peak(env, grid)
    assert abs(angle) <= 1.0 + 1e-9
    assert abs(rng_ - TARGET_Z) <= 3 * grid.range_step


def _lateral_contrast_db(env):
    profile = env.max(axis=1)
    peak = int(np.argmax(profile))
    left = peak
    while left > 0 and profile[left - 1] < profile[left]:
        left -= 1
    right = peak
    while right < profile.size - 1 and profile[right + 1] < profile[right]:
        right += 1
    sidelobes = np.concatenate([profile[:left + 1], profile[right:]])
    return 20.0 * np.log10(profile[peak] / sidelobes.max())


def test_sta_sidelobes_are_lower_than_dw(point_setup):
    grid = PolarGrid(np.linspace(-30, 30, 121), np.arange(28e-3, 32e-3, C / (2 * FS)))
    r_v = 5e-3
    dw = envelope(das_dw(point_setup(dw_delays(r_v, GEOMETRY, C)), r_v, grid, GEOMETRY, C))
    events = [point_setup(single_element_delays(j, GEOMETRY)) for j in range(GEOMETRY.n_elements)]
    sta = envelope(das_sta(events, grid, GEOMETRY, C, progress=False))
    assert _lateral_contrast_db(sta) >= _lateral_contrast_db(dw)


def test_csf_focus_is_at_least_as_strong_as_dw(point_setup, target_grid):
    plan = csf_scan_plan(GEOMETRY, n_beams=21, half_angle=10.0, focus_range=TARGET_Z)
    frames = [point_setup(focused_delays(b.focus_range, b.steer_angle, GEOMETRY, C)) for b in plan]
    csf = envelope(das_csf(frames, plan, target_grid.ranges, GEOMETRY, C, bandpass=None, progress=False))
    r_v = 5e-3
    dw = envelope(das_dw(point_setup(dw_delays(r_v, GEOMETRY, C)), r_v, target_grid, GEOMETRY, C))
    assert csf.max() >= dw.max()


def test_beamformers_are_linear(rng, target_grid):
    x = RFFrame(rng.normal(size=(16, 4000)), FS)
    y = RFFrame(rng.normal(size=(16, 4000)), FS)
    mixed = RFFrame(2.5 * x.samples - 0.75 * y.samples, FS)
    plan = csf_scan_plan(GEOMETRY, n_beams=3, half_angle=5.0, focus_range=TARGET_Z)

    def check(beamform):
        expected = 2.5 * beamform(x) - 0.75 * beamform(y)
        np.testing.assert_allclose(beamform(mixed), expected, rtol=1e-9,
                                   atol=1e-9 * np.max(np.abs(expected)))

    check(lambda f: das_dw(f, 5e-3, target_grid, GEOMETRY, C))
    check(lambda f: das_sta([f, f], target_grid, GEOMETRY, C, tx_elements=[3, 9], progress=False))
    check(lambda f: das_csf([f] * 3, plan, target_grid.ranges, GEOMETRY, C, progress=False))

def test_single_event_sta_equals_element_source_dw(rng, target_grid):
    mf = RFFrame(rng.normal(size=(16, 4000)), FS)
    j = 5
    sta = das_sta([mf], target_grid, GEOMETRY, C, tx_elements=[j], progress=False)
    dw = das_dw(mf, 0.0, target_grid, GEOMETRY, C, source_x=float(GEOMETRY.element_x[j]))
    np.testing.assert_allclose(sta, dw, rtol=1e-9, atol=1e-12)


def test_sta_requires_every_event(target_grid):
    frames = [RFFrame(np.zeros((16, 100)), FS)] * 15
    with pytest.raises(ValueError, match="Missing transmit events"):
        das_sta(frames, target_grid, GEOMETRY, C, progress=False)


def test_channel_count_must_match(target_grid):
    with pytest.raises(ValueError, match="channels"):
        das_dw(RFFrame(np.zeros((8, 100)), FS), 5e-3, target_grid, GEOMETRY, C)


def test_csf_plan_frame_mismatch():
    plan = csf_scan_plan(GEOMETRY, n_beams=3, half_angle=1.0)
    with pytest.raises(ValueError, match="beams"):
        das_csf([RFFrame(np.zeros((16, 10)), FS)], plan, np.linspace(1e-3, 2e-3, 5), GEOMETRY,
                progress=False)


def test_gain_profile():
    frame = RFFrame(np.ones((2, 3)), FS, t0=0.0)
    gained = apply_gain(frame, fixed_db=22.0, tgc_db_per_cm=2.3, c=C)
    assert gained.samples[0, 0] == pytest.approx(10 ** (22 / 20))
    deep = RFFrame(np.ones((1, 1)), FS, t0=2 * 0.01 / C)
    assert apply_gain(deep, c=C).samples[0, 0] == pytest.approx(10 ** (24.3 / 20))


def test_gaussian_bandpass_keeps_centre_and_drops_dc():
    step = C / (2 * FS)
    n = 3200
    t = np.arange(n) / FS
    tone = np.cos(2 * np.pi * 7.5e6 * t)[None, :]
    np.testing.assert_allclose(gaussian_bandpass(tone, step, C), tone, atol=1e-9)
    assert np.max(np.abs(gaussian_bandpass(np.ones((1, n)), step, C))) < 0.01


def test_log_compress_maps_peak_to_dynamic_range():
    env = np.array([[1.0, 0.1, 0.01, 1e-4]])
    db = log_compress(env, 60.0, None)
    np.testing.assert_allclose(db[0], [60.0, 40.0, 20.0, 0.0])


def test_log_compress_hits_target_mean(rng):
    env = rng.rayleigh(size=(40, 200))
    above_floor = log_compress(env, 60.0, None) > 0
    db = log_compress(env, 60.0, 32.0)
    assert db.max() <= 60.0 and db.min() >= 0.0
    assert np.mean(db[above_floor]) == pytest.approx(32.0, abs=1e-3)


def test_log_compress_rejects_degenerate_input():
    with pytest.raises(ValueError):
        log_compress(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        log_compress(np.array([[1.0, -1.0]]))


def test_scan_convert_constant_sector():
    grid = PolarGrid.sector(20e-3, r_min=5e-3, half_angle=30.0, angle_step=1.0, decimation=40)
    raster = scan_convert(np.full(grid.shape, 7.0), grid, pixel_size=0.5e-3)
    inside = raster.in_sector
    assert inside.any() and not inside.all()
    np.testing.assert_allclose(raster.values[inside], 7.0)
    # bottom corner lies beyond the last range
    assert np.isnan(raster.values[-1, -1])


def test_scan_convert_shape_mismatch():
    grid = PolarGrid([-1.0, 0.0, 1.0], [1e-3, 2e-3])
    with pytest.raises(ValueError):
        scan_convert(np.zeros((2, 3)), grid)


def test_to_gray_levels():
    grid = PolarGrid([-1.0, 0.0, 1.0], [1e-3, 2e-3])
    raster = scan_convert(np.full(grid.shape, 60.0), grid, pixel_size=0.02e-3)
    gray = to_gray(raster)
    assert gray.dtype == np.uint8
    assert gray[raster.in_sector].min() == 255
    assert gray[~raster.in_sector].max() == 0


def test_render_outputs(rng):
    grid = PolarGrid.sector(10e-3, r_min=2e-3, half_angle=20.0, angle_step=2.0, decimation=20)
    image = render(rng.normal(size=grid.shape), grid, {"scheme": "dw"}, pixel_size=0.2e-3)
    assert image.scanlines.shape == grid.shape
    assert image.compressed.max() <= 60.0
    assert image.meta["scheme"] == "dw"
    assert image.gray().shape == image.cartesian.values.shape


def test_grid_validation():
    with pytest.raises(ValueError):
        PolarGrid([0.0, -1.0], [1e-3])
    with pytest.raises(ValueError):
        PolarGrid([0.0], [0.0, 1e-3])
    with pytest.raises(ValueError):
        PolarGrid([95.0], [1e-3])


def test_sector_grid_layout():
    grid = PolarGrid.sector(75e-3)
    assert grid.angles[0] == -45.0 and grid.angles[-1] == 45.0
    assert grid.shape[0] == 181
    assert grid.range_step == pytest.approx(C / (2 * FS) * 4)


def test_row_grid_covers_pins():
    grid = PolarGrid.around_row(20e-3, 16e-3)
    x, z = grid.points()
    assert x.min() < -16e-3 and x.max() > 16e-3
    assert grid.ranges[0] < 20e-3 < grid.ranges[-1]


if __name__ == '__main__':
    pytest.main([__file__])
