#!/usr/bin/env python3
"""
Virtual source sweep for diverging-wave imaging.

For each aperture and sector scenario, the pin signal-strength profile of a
coded diverging-wave image is computed for every candidate virtual source
distance and compared with the profile of synthetic transmit aperture
imaging on the same phantom. The comparison removes each profile's mean,
so it matches the insonification shape; the absolute strength advantage at
the central pin is reported separately.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd
from tqdm import tqdm

from codedwave.acoustics import PIN_ROWS, PinLayout, PinRow, Phantom, make_row_phantom, simulate_rx
from codedwave.beamform import PolarGrid, das_dw
from codedwave.codes import CodedExcitation, make_excitation
from codedwave.config import ExperimentConfig
from codedwave.metrics import signal_strength_profile, write_profile
from codedwave.receiver import ReferenceBank, build_banks, correlate_transmissions
from codedwave.txprofiles import ArrayGeometry, DelayProfile, dw_delays, single_element_delays, wavelengths

tqdm.monitor_interval = 0
logger = logging.getLogger(__name__)

DEFAULT_CANDIDATES = np.round(np.arange(10.5, 100.0 + 0.25, 0.5), 3) * 1e-3
DESK_CANDIDATES = np.round(np.arange(1.0, 20.0 + 0.25, 0.5), 3) * 1e-3
APERTURES = (64, 32)  # wavelengths
SECTOR_ANGLES = (90.0, 60.0, 30.0)  # degrees
DW_CODE_BITS = 8
PIN_MARGIN = 3e-3

Pin = Tuple[float, float]


class MissingScenarioError(ValueError):
    """A trend report needs every aperture and sector combination."""


@dataclass(frozen=True)
class Scenario:
    """Aperture, sector and pin layout of one sweep."""

    name: str
    aperture_lambda: int
    sector_angle: float
    n_elements: int
    rows: Tuple[PinRow, ...]
    required_pins: Tuple[Pin, ...]
    central_pin: Pin
    pitch: float = 0.1e-3
    max_depth: float = 50e-3

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_elements, self.pitch)

    def phantom(self, config: ExperimentConfig) -> Phantom:
        return make_row_phantom(self.rows, config.medium_model(), config.phantom.reflectivity)

    @property
    def evaluation_pins(self) -> Tuple[Pin, ...]:
        """Required pins, followed by the central pin when it is not one of them."""
        if any(_same_pin(p, self.central_pin) for p in self.required_pins):
            return self.required_pins
        return self.required_pins + (self.central_pin,)

    @property
    def central_index(self) -> int:
        return next(i for i, p in enumerate(self.evaluation_pins) if _same_pin(p, self.central_pin))


@dataclass(frozen=True)
class SweepResult:
    """Profiles and objective of one virtual source sweep.

    Profile columns follow `scenario.evaluation_pins`; the objective uses the
    first len(scenario.required_pins) columns.
    """

    scenario: Scenario
    r_v_candidates: np.ndarray
    dw_profiles: np.ndarray
    sta_profile: np.ndarray
    objective: np.ndarray
    best_r_v: float
    central_strength_diff_db: float

    @property
    def best_index(self) -> int:
        return best_candidate(self.r_v_candidates, self.objective)


@dataclass
class TrendReport:
    """Structural checks over the six aperture and sector scenarios."""

    best_rv: Dict[Tuple[int, float], float] = field(default_factory=dict)
    strength_diff: Dict[Tuple[int, float], float] = field(default_factory=dict)
    angle_monotone: Dict[int, bool] = field(default_factory=dict)
    aperture_ordered: Dict[float, bool] = field(default_factory=dict)
    dw_exceeds_sta: Dict[Tuple[int, float], bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        checks = list(self.angle_monotone.values()) + list(self.aperture_ordered.values())
        return all(checks + list(self.dw_exceeds_sta.values()))

    def lines(self) -> List[str]:
        out = []
        for (aperture, angle), r_v in sorted(self.best_rv.items(), key=lambda kv: (-kv[0][0], -kv[0][1])):
            out.append(
                f"{aperture}λ {angle:.0f}°: best r_v {r_v * 1e3:.1f} mm "
                f"({r_v / wavelengths(1):.0f}λ), DW - STA {self.strength_diff[(aperture, angle)]:+.1f} dB"
            )
        for aperture, ok in sorted(self.angle_monotone.items(), reverse=True):
            out.append(f"{aperture}λ: r_v grows as the sector narrows: {'yes' if ok else 'NO'}")
        for angle, ok in sorted(self.aperture_ordered.items(), reverse=True):
            out.append(f"{angle:.0f}°: smaller aperture needs smaller r_v: {'yes' if ok else 'NO'}")
        out.append(f"DW exceeds STA in every scenario: {'yes' if all(self.dw_exceeds_sta.values()) else 'NO'}")
        return out


def _same_pin(a: Pin, b: Pin) -> bool:
    return math.isclose(a[0], b[0], abs_tol=1e-9) and math.isclose(a[1], b[1], abs_tol=1e-9)


def _centre(row: PinRow, count: int) -> List[Pin]:
    pins = sorted(row.positions(), key=lambda p: abs(p[0]))[:count]
    return sorted(pins)


def table1_scenarios(desk: bool = False) -> List[Scenario]:
    """
    The six aperture (64, 32 wavelengths) by sector (90, 60, 30 degrees) scenarios.

    Full scale uses 128/64-element apertures on the commercial phantom rows.
    Desk scale halves the element counts and uses one three-pin row at 20 mm
    whose outer pins sit at 85 % of each sector's half angle.
    """
    scenarios = []
    for aperture in APERTURES:
        n_full = int(round(wavelengths(aperture) / 0.1e-3))
        for angle in SECTOR_ANGLES:
            if desk:
                depth = 20e-3
                spacing = depth * math.tan(math.radians(0.85 * angle / 2.0))
                row = PinRow(depth, 3, spacing)
                scenarios.append(Scenario(
                    name=f"desk-{aperture}λ-{angle:.0f}°",
                    aperture_lambda=aperture,
                    sector_angle=angle,
                    n_elements=n_full // 2,
                    rows=(row,),
                    required_pins=tuple(row.positions()),
                    central_pin=(0.0, depth),
                    max_depth=30e-3,
                ))
                continue
            row20 = PIN_ROWS[PinLayout.HORIZONTAL_PINS_20MM]
            row40 = PIN_ROWS[PinLayout.HORIZONTAL_PINS_40MM]
            if angle == 90.0:
                required = row20.positions()
                central = (0.0, 25e-3)
            elif angle == 60.0:
                required = _centre(row20, 5) + row40.positions()
                central = (0.0, 20e-3)
            else:
                required = _centre(row40, 5)
                central = (0.0, 20e-3)
            scenarios.append(Scenario(
                name=f"{aperture}λ-{angle:.0f}°",
                aperture_lambda=aperture,
                sector_angle=angle,
                n_elements=n_full,
                rows=tuple(PIN_ROWS.values()),
                required_pins=tuple(required),
                central_pin=central,
            ))
    return scenarios


def objective_from_profiles(dw_profiles: np.ndarray, sta_profile: np.ndarray, n_required: int) -> np.ndarray:
    """RMS of the mean-removed profile difference, one value per candidate."""
    dw = np.atleast_2d(dw_profiles)[:, :n_required]
    sta = np.asarray(sta_profile)[:n_required]
    shape_dw = dw - dw.mean(axis=1, keepdims=True)
    shape_sta = sta - sta.mean()
    return np.sqrt(np.mean((shape_dw - shape_sta[None, :]) ** 2, axis=1))


def best_candidate(r_v_candidates: np.ndarray, objective: np.ndarray) -> int:
    """Index of the minimal objective; ties go to the smallest r_v."""
    objective = np.asarray(objective)
    tied = np.flatnonzero(objective == objective.min())
    return int(tied[np.argmin(np.asarray(r_v_candidates)[tied])])


def _row_grids(scenario: Scenario, config: ExperimentConfig) -> List[Tuple[PolarGrid, List[int]]]:
    """One narrow polar band per pin depth, with the pin indices it serves."""
    by_depth: Dict[float, List[int]] = {}
    for index, (_, z) in enumerate(scenario.evaluation_pins):
        by_depth.setdefault(round(z, 9), []).append(index)
    pins = scenario.evaluation_pins
    range_step = config.medium.sound_speed / (2.0 * config.sample_rate) * config.imaging.decimation
    grids = []
    for depth, indices in sorted(by_depth.items()):
        half_width = max(abs(pins[i][0]) for i in indices)
        grid = PolarGrid.around_row(depth, half_width, PIN_MARGIN, config.imaging.angle_step, range_step)
        grids.append((grid, indices))
    return grids


def _profile(scenario: Scenario, grids: List[Tuple[PolarGrid, List[int]]],
             scanlines: Sequence[np.ndarray]) -> np.ndarray:
    pins = scenario.evaluation_pins
    values = np.empty(len(pins))
    for (grid, indices), lines in zip(grids, scanlines):
        values[indices] = signal_strength_profile(np.abs(lines), grid, [pins[i] for i in indices])
    return values


def _acquire(excitation: CodedExcitation, profile: DelayProfile, phantom: Phantom,
             geometry: ArrayGeometry, config: ExperimentConfig, scenario: Scenario,
             banks: Dict[str, ReferenceBank]):
    response = config.element_response()
    frames = {
        label: simulate_rx(waveform, profile, phantom, geometry, response=response,
                           sample_rate=config.sample_rate, max_depth=scenario.max_depth,
                           progress=False)
        for label, waveform in excitation.transmissions.items()
    }
    return correlate_transmissions(frames, banks, config.medium.sound_speed).analytic()


def dw_profile(r_v: float, scenario: Scenario, config: ExperimentConfig,
               banks: Dict[str, ReferenceBank]) -> np.ndarray:
    """Pin profile (dB) of the coded diverging-wave image for one r_v."""
    geometry = scenario.geometry()
    c = config.medium.sound_speed
    excitation = make_excitation(config.excitation.code_bits or DW_CODE_BITS,
                                 config.excitation.carrier_mhz * 1e6,
                                 config.excitation.cycles_per_chip, config.sample_rate)
    mf = _acquire(excitation, dw_delays(r_v, geometry, c), scenario.phantom(config),
                  geometry, config, scenario, banks)
    grids = _row_grids(scenario, config)
    return _profile(scenario, grids, [das_dw(mf, r_v, grid, geometry, c) for grid, _ in grids])


def sta_profile(scenario: Scenario, config: ExperimentConfig,
                banks: Dict[str, ReferenceBank], progress: bool = True) -> np.ndarray:
    """Pin profile (dB) of the synthetic transmit aperture image with the 2-cycle pulse."""
    geometry = scenario.geometry()
    c = config.medium.sound_speed
    excitation = make_excitation(1, config.excitation.carrier_mhz * 1e6,
                                 config.excitation.cycles_per_chip, config.sample_rate)
    phantom = scenario.phantom(config)
    grids = _row_grids(scenario, config)
    sums: List[Optional[np.ndarray]] = [None] * len(grids)
    elements = range(geometry.n_elements)
    if progress:
        elements = tqdm(elements, desc=f"STA reference {scenario.name}", unit="tx", leave=False)
    for j in elements:
        mf = _acquire(excitation, single_element_delays(j, geometry), phantom, geometry,
                      config, scenario, banks)
        source_x = float(geometry.element_x[j])
        for k, (grid, _) in enumerate(grids):
            part = das_dw(mf, 0.0, grid, geometry, c, source_x=source_x)
            sums[k] = part if sums[k] is None else sums[k] + part
    return _profile(scenario, grids, [s for s in sums if s is not None])


def _check_coverage(scenario: Scenario) -> None:
    half = scenario.sector_angle / 2.0
    for x, z in scenario.required_pins:
        angle = math.degrees(math.atan2(abs(x), z))
        if angle > half + 1e-9:
            raise ValueError(
                f"Pin ({x * 1e3:.1f}, {z * 1e3:.1f}) mm at {angle:.1f}° lies outside "
                f"the {scenario.sector_angle:.0f}° sector of {scenario.name}"
            )


def sweep_rv(
    candidates: Sequence[float],
    scenario: Scenario,
    config: Optional[ExperimentConfig] = None,
    workers: int = 1,
    progress: bool = True,
) -> SweepResult:
    """
    Sweep the virtual source distance and pick the best-matching profile.

    Args:
        candidates: Virtual source distances in metres, each within (0, 100 mm]
        scenario: Aperture, sector and pins
        config: Medium, excitation and imaging settings (noise is not simulated)
        workers: Processes evaluating candidates in parallel
        progress: Show progress bars

    Returns:
        SweepResult; ties resolve to the first (smallest-index) candidate

    Raises:
        ValueError: On empty or out-of-range candidates or pins outside the sector
    """
    config = config or ExperimentConfig()
    r_v = np.asarray(candidates, dtype=float)
    if r_v.size == 0:
        raise ValueError("Need at least one virtual source candidate")
    if np.any(r_v <= 0) or np.any(r_v > 0.1 + 1e-12):
        raise ValueError("Virtual source candidates must lie within (0, 100] mm")
    _check_coverage(scenario)

    geometry = scenario.geometry()
    medium = config.medium_model()
    response = config.element_response()
    fc = config.excitation.carrier_mhz * 1e6
    cycles = config.excitation.cycles_per_chip
    dw_banks = build_banks(make_excitation(config.excitation.code_bits or DW_CODE_BITS, fc, cycles,
                                           config.sample_rate), geometry, medium, response)
    sta_banks = build_banks(make_excitation(1, fc, cycles, config.sample_rate), geometry, medium, response)

    logger.info("Sweeping %d candidates for %s", r_v.size, scenario.name)
    sta = sta_profile(scenario, config, sta_banks, progress)

    evaluate: Callable[[float], np.ndarray] = partial(dw_profile, scenario=scenario, config=config,
                                                      banks=dw_banks)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, r_v.tolist()))
    else:
        items = r_v.tolist()
        if progress:
            items = tqdm(items, desc=f"r_v sweep {scenario.name}", unit="rv", leave=False)
        rows = [evaluate(value) for value in items]

    profiles = np.vstack(rows)
    objective = objective_from_profiles(profiles, sta, len(scenario.required_pins))
    best = best_candidate(r_v, objective)
    diff = float(profiles[best, scenario.central_index] - sta[scenario.central_index])
    logger.info("%s: best r_v %.1f mm, central strength difference %.1f dB",
                scenario.name, r_v[best] * 1e3, diff)
    return SweepResult(
        scenario=scenario,
        r_v_candidates=r_v,
        dw_profiles=profiles,
        sta_profile=sta,
        objective=objective,
        best_r_v=float(r_v[best]),
        central_strength_diff_db=diff,
    )


def table1_trends(results: Sequence[SweepResult]) -> TrendReport:
    """
    Check the structure of the optimum over the six scenarios.

    Raises:
        MissingScenarioError: If an aperture and sector combination is absent
    """
    by_key = {(r.scenario.aperture_lambda, r.scenario.sector_angle): r for r in results}
    missing = [(a, s) for a in APERTURES for s in SECTOR_ANGLES if (a, s) not in by_key]
    if missing:
        names = ", ".join(f"{a}λ/{s:.0f}°" for a, s in missing)
        raise MissingScenarioError(f"Missing scenario(s): {names}")

    report = TrendReport()
    for key, result in by_key.items():
        report.best_rv[key] = result.best_r_v
        report.strength_diff[key] = result.central_strength_diff_db
        report.dw_exceeds_sta[key] = result.central_strength_diff_db > 0
    for aperture in APERTURES:
        ordered = [report.best_rv[(aperture, s)] for s in SECTOR_ANGLES]
        report.angle_monotone[aperture] = all(b > a for a, b in zip(ordered, ordered[1:]))
    for angle in SECTOR_ANGLES:
        report.aperture_ordered[angle] = report.best_rv[(32, angle)] < report.best_rv[(64, angle)]
    return report


def write_sweep(result: SweepResult, directory: Union[str, Path]) -> List[Path]:
    """Candidate table plus one profile CSV per candidate."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise type(exc)(f"Cannot create {directory}: {exc.strerror or exc}") from exc
    stem = result.scenario.name.replace("λ", "lambda").replace("°", "deg")
    table = pd.DataFrame({
        "rv_mm": result.r_v_candidates * 1e3,
        "objective": result.objective,
        "central_diff_db": result.dw_profiles[:, result.scenario.central_index]
        - result.sta_profile[result.scenario.central_index],
    })
    summary = directory / f"{stem}_sweep.csv"
    table.to_csv(summary, index=False, float_format="%.9g", lineterminator="\n")
    written = [summary]
    pins = list(result.scenario.evaluation_pins)
    written.append(write_profile(result.sta_profile, pins, directory / f"{stem}_sta.csv"))
    for r_v, row in zip(result.r_v_candidates, result.dw_profiles):
        written.append(write_profile(row, pins, directory / f"{stem}_rv{r_v * 1e3:05.1f}mm.csv"))
    return written
