#!/usr/bin/env python3
"""
End-to-end acquisition and processing chain.

phantom -> transmit events -> simulated RF -> gain -> correlation receiver
-> delay-and-sum -> envelope / log compression / scan conversion -> metrics.

Events are processed one at a time so synthetic transmit aperture runs
(one event per element) never hold every channel record in memory.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd
from scipy import signal
from tqdm import tqdm

from codedwave import rfio
from codedwave.acoustics import (
    PIN_ROWS,
    Cyst,
    Medium,
    Phantom,
    PinLayout,
    PinRow,
    Rect,
    RFFrame,
    make_pin_phantom,
    make_speckle_phantom,
    simulate_rx,
)
from codedwave.beamform import (
    ChannelData,
    PolarGrid,
    SectorImage,
    apply_gain,
    das_csf,
    das_dw,
    gaussian_bandpass,
    render,
)
from codedwave.config import ExperimentConfig, PhantomConfig, format_config
from codedwave.metrics import (
    RoiSpec,
    cnr,
    cnr_sweep,
    mean_speckle_power,
    noise_power,
    penetration_depth,
    pin_snr,
    signal_strength_profile,
    snr_plus_one,
    write_cnr_table,
    write_depth_curve,
    write_profile,
)
from codedwave.output_locations import (
    OutputPaths,
    ensure_output_paths,
    frame_name,
    get_output_paths,
)
from codedwave.receiver import ReferenceBank, build_banks, correlate_transmissions
from codedwave.txprofiles import (
    ArrayGeometry,
    DelayProfile,
    ScanBeam,
    csf_scan_plan,
    dw_delays,
    focused_delays,
    single_element_delays,
)

tqdm.monitor_interval = 0
logger = logging.getLogger(__name__)

POSITION_SEED_BASE = 1000

PIN_PRESET_ROWS = {
    PinLayout.HORIZONTAL_PINS_20MM.value: [PinLayout.HORIZONTAL_PINS_20MM],
    PinLayout.HORIZONTAL_PINS_25MM.value: [PinLayout.HORIZONTAL_PINS_25MM],
    PinLayout.HORIZONTAL_PINS_40MM.value: [PinLayout.HORIZONTAL_PINS_40MM],
    PinLayout.FULL_MODEL550.value: list(PIN_ROWS),
}


@dataclass
class RunResult:
    """Artifacts of one pipeline run."""

    paths: OutputPaths
    image: SectorImage
    artifacts: List[Path] = field(default_factory=list)
    summary: Dict[str, float] = field(default_factory=dict)
    manifest: Optional[Path] = None


def build_phantom(config: ExperimentConfig) -> Phantom:
    """
    Phantom described by the configuration.

    Raises:
        OSError: If a phantom file cannot be read
        ValueError: If a phantom file lacks the x_mm, z_mm, reflectivity columns
    """
    medium = config.medium_model()
    p = config.phantom
    if p.preset == "speckle":
        half = p.speckle_width_mm / 2.0 * 1e-3
        region = Rect(-half, half, 1e-3, p.speckle_depth_mm * 1e-3)
        cysts = []
        if p.cyst_diameter_mm > 0:
            cysts.append(Cyst(p.cyst_x_mm * 1e-3, p.cyst_z_mm * 1e-3, p.cyst_diameter_mm * 1e-3))
        return make_speckle_phantom(region, p.speckle_density, cysts, seed=config.seed, medium=medium)
    if p.preset == "file":
        try:
            table = pd.read_csv(p.file)
        except OSError as exc:
            raise type(exc)(f"Cannot read phantom file {p.file}: {exc.strerror or exc}") from exc
        missing = {"x_mm", "z_mm", "reflectivity"} - set(table.columns)
        if missing:
            raise ValueError(f"Phantom file {p.file} lacks columns {sorted(missing)}")
        return Phantom(
            x=table["x_mm"].to_numpy(dtype=float) * 1e-3,
            z=table["z_mm"].to_numpy(dtype=float) * 1e-3,
            reflectivity=table["reflectivity"].to_numpy(dtype=float),
            medium=medium,
            label=Path(p.file).stem,
        )
    return make_pin_phantom(p.preset, medium, p.reflectivity)


def scan_plan(config: ExperimentConfig) -> List[ScanBeam]:
    s = config.scheme
    return csf_scan_plan(config.array_geometry(), s.beams, s.half_angle, s.focus_mm * 1e-3)


def transmit_events(config: ExperimentConfig, geometry: ArrayGeometry) -> List[DelayProfile]:
    """Delay profile of every transmission event of the scheme."""
    c = config.medium.sound_speed
    name = config.scheme.name
    if name == "dw":
        return [dw_delays(config.r_v, geometry, c)]
    if name == "sta":
        return [single_element_delays(i, geometry) for i in range(geometry.n_elements)]
    return [focused_delays(b.focus_range, b.steer_angle, geometry, c) for b in scan_plan(config)]


def image_grid(config: ExperimentConfig) -> PolarGrid:
    im = config.imaging
    grid = PolarGrid.sector(
        r_max=config.max_depth,
        half_angle=im.half_angle,
        angle_step=im.angle_step,
        c=config.medium.sound_speed,
        sample_rate=config.sample_rate,
        decimation=im.decimation,
    )
    if config.scheme.name == "csf":
        return PolarGrid(angles=np.array([b.steer_angle for b in scan_plan(config)]), ranges=grid.ranges)
    return grid


def frame_seed(seed: int, event: int, sequence: int = 0) -> int:
    """Noise seed of one frame, derived from the run seed."""
    return int(np.random.SeedSequence([seed, event, sequence]).generate_state(1)[0])


def acquire_event(
    config: ExperimentConfig,
    profile: DelayProfile,
    phantom: Phantom,
    event: int,
    noise_power_override: Optional[float] = None,
    seed: Optional[int] = None,
) -> Dict[str, RFFrame]:
    """Simulate every coded sequence of one transmission event."""
    geometry = config.array_geometry()
    excitation = config.make_excitation()
    response = config.element_response()
    power = config.noise.power if noise_power_override is None else noise_power_override
    base_seed = config.seed if seed is None else seed
    frames = {}
    for k, (label, waveform) in enumerate(excitation.transmissions.items()):
        frames[label] = simulate_rx(
            waveform, profile, phantom, geometry,
            noise_power=power,
            seed=frame_seed(base_seed, event, k),
            response=response,
            sample_rate=config.sample_rate,
            max_depth=config.max_depth,
            progress=False,
        )
    return frames


def _analytic_frame(frame: RFFrame) -> RFFrame:
    return RFFrame(samples=signal.hilbert(frame.samples, axis=1), sample_rate=frame.sample_rate,
                   t0=frame.t0)


def receive_event(
    config: ExperimentConfig,
    frames: Dict[str, RFFrame],
    banks: Dict[str, ReferenceBank],
) -> ChannelData:
    """
    Gain and correlation receiver of one event.

    Conventional focusing with the Gaussian filter skips the correlator; its
    frame is shifted so the echo envelope peak addresses the scatterer time.
    """
    c = config.medium.sound_speed
    gained = {
        label: apply_gain(frame, config.gain.fixed_db, config.gain.tgc_db_per_cm, c)
        for label, frame in frames.items()
    }
    if config.scheme.name == "csf" and config.scheme.csf_filter == "gaussian":
        bank, frame = banks["A"], gained["A"]
        return RFFrame(samples=frame.samples, sample_rate=frame.sample_rate,
                       t0=frame.t0 - bank.peak_offset / bank.sample_rate)
    return correlate_transmissions(gained, banks, c)


class ImageAccumulator:
    """Coherent image formation fed one received event at a time."""

    def __init__(self, config: ExperimentConfig, grid: PolarGrid):
        self.config = config
        self.grid = grid
        self.geometry = config.array_geometry()
        self.c = config.medium.sound_speed
        self._plan = scan_plan(config) if config.scheme.name == "csf" else []
        self._lines: List[np.ndarray] = []
        self._sum: Optional[np.ndarray] = None
        self.events = 0

    def add(self, event: int, data: ChannelData) -> None:
        analytic = _analytic_frame(RFFrame(np.asarray(data.samples), data.sample_rate,
                                           getattr(data, "origin", data.t0)))
        name = self.config.scheme.name
        if name == "csf":
            line = das_csf([analytic], [self._plan[event]], self.grid.ranges, self.geometry,
                           self.c, bandpass=None, progress=False)
            self._lines.append(line[0])
        else:
            if name == "dw":
                part = das_dw(analytic, self.config.r_v, self.grid, self.geometry, self.c)
            else:
                source_x = float(self.geometry.element_x[event])
                part = das_dw(analytic, 0.0, self.grid, self.geometry, self.c, source_x=source_x)
            self._sum = part if self._sum is None else self._sum + part
        self.events += 1

    def finish(self) -> np.ndarray:
        """Beamformed analytic scan lines of shape grid.shape."""
        if self.config.scheme.name == "csf":
            if len(self._lines) != len(self._plan):
                raise ValueError(f"Received {len(self._lines)} of {len(self._plan)} beams")
            lines = np.vstack(self._lines)
            if self.config.scheme.csf_filter == "gaussian":
                lines = gaussian_bandpass(lines, self.grid.range_step, self.c,
                                          self.config.excitation.carrier_mhz * 1e6,
                                          self.config.excitation.fractional_bw)
            return lines
        if self._sum is None:
            raise ValueError("No events were beamformed")
        if self.config.scheme.name == "sta" and self.events != self.geometry.n_elements:
            raise ValueError(f"Missing transmit events: got {self.events} of {self.geometry.n_elements}")
        return self._sum


def form_image(config: ExperimentConfig, scanlines: np.ndarray, grid: PolarGrid) -> SectorImage:
    im = config.imaging
    meta = {"scheme": config.scheme.name, "code_bits": config.code_bits}
    if config.scheme.name == "dw":
        meta["rv_mm"] = config.scheme.rv_mm
    return render(scanlines, grid, meta, im.dynamic_range_db, im.target_mean_db, im.pixel_mm * 1e-3)


def image_events(
    config: ExperimentConfig,
    events: Sequence[Mapping[str, Union[RFFrame, Path]]],
    banks: Dict[str, ReferenceBank],
    grid: Optional[PolarGrid] = None,
    progress: bool = True,
) -> SectorImage:
    """Receive and beamform already acquired events; file entries are read lazily."""
    grid = grid or image_grid(config)
    accumulator = ImageAccumulator(config, grid)
    items = enumerate(events)
    if progress:
        items = tqdm(items, total=len(events), desc="Beamforming", unit="event", leave=False)
    for index, entry in items:
        frames = {label: f if isinstance(f, RFFrame) else rfio.read_rf(f) for label, f in entry.items()}
        accumulator.add(index, receive_event(config, frames, banks))
    return form_image(config, accumulator.finish(), grid)


def empty_phantom(config: ExperimentConfig) -> Phantom:
    return Phantom(np.zeros(0), np.zeros(0), np.zeros(0), config.medium_model(), "noise")


def write_acquisition(
    config: ExperimentConfig,
    directory: Path,
    phantom: Optional[Phantom] = None,
    seed: Optional[int] = None,
    progress: bool = True,
) -> List[Path]:
    """Simulate every event of the scheme and store one container per frame."""
    phantom = phantom if phantom is not None else build_phantom(config)
    profiles = transmit_events(config, config.array_geometry())
    items = enumerate(profiles)
    if progress:
        items = tqdm(items, total=len(profiles), desc="Simulating", unit="event", leave=False)
    written = []
    for index, profile in items:
        for label, frame in acquire_event(config, profile, phantom, index, seed=seed).items():
            written.append(rfio.write_rf(frame, directory / frame_name(index, label)))
    return written


def noise_envelopes(
    config: ExperimentConfig,
    banks: Dict[str, ReferenceBank],
    grid: PolarGrid,
    progress: bool = True,
) -> List[np.ndarray]:
    """Envelopes of independent noise-only acquisitions (seeds seed+1 .. seed+K)."""
    geometry = config.array_geometry()
    empty = empty_phantom(config)
    profiles = transmit_events(config, geometry)
    envelopes = []
    realizations = range(1, config.noise.realizations + 1)
    if progress:
        realizations = tqdm(realizations, desc="Noise realizations", unit="run", leave=False)
    for k in realizations:
        scanlines = _beamform_phantom(config, empty, profiles, banks, grid, config.seed + k)
        envelopes.append(np.abs(scanlines))
    return envelopes


def _beamform_phantom(
    config: ExperimentConfig,
    phantom: Phantom,
    profiles: Sequence[DelayProfile],
    banks: Dict[str, ReferenceBank],
    grid: PolarGrid,
    seed: int,
) -> np.ndarray:
    accumulator = ImageAccumulator(config, grid)
    for index, profile in enumerate(profiles):
        frames = acquire_event(config, profile, phantom, index, seed=seed)
        accumulator.add(index, receive_event(config, frames, banks))
    return accumulator.finish()


def position_offsets(config: ExperimentConfig) -> np.ndarray:
    """Lateral phantom offsets in metres, centred on zero."""
    p = config.phantom
    return (np.arange(p.positions) - (p.positions - 1) / 2.0) * p.position_step_mm * 1e-3


def moved_images(
    config: ExperimentConfig,
    phantom: Phantom,
    banks: Dict[str, ReferenceBank],
    grid: PolarGrid,
    progress: bool = True,
) -> List[Tuple[float, SectorImage]]:
    """
    Images of the phantom moved sideways by every position offset.

    Moving the phantom by +s stands for moving the array by -s across its
    surface; each position gets its own noise seed.
    """
    profiles = transmit_events(config, config.array_geometry())
    offsets = position_offsets(config)
    items = enumerate(offsets.tolist())
    if progress:
        items = tqdm(items, total=offsets.size, desc="Array positions", unit="pos", leave=False)
    images = []
    for k, offset in items:
        moved = replace(phantom, x=phantom.x + offset)
        seed = config.seed + POSITION_SEED_BASE + k
        scanlines = _beamform_phantom(config, moved, profiles, banks, grid, seed)
        images.append((offset, form_image(config, scanlines, grid)))
    return images


def _pin_rows(config: ExperimentConfig) -> List[PinRow]:
    return [PIN_ROWS[layout] for layout in PIN_PRESET_ROWS.get(config.phantom.preset, [])]


def _in_grid(grid: PolarGrid, x: float, z: float) -> bool:
    r = math.hypot(x, z)
    theta = math.degrees(math.atan2(x, z))
    return bool(grid.ranges[0] <= r <= grid.ranges[-1] and grid.angles[0] <= theta <= grid.angles[-1])


def roi_diameters(p: PhantomConfig) -> np.ndarray:
    """ROI diameter sweep in metres, one step up to the cyst diameter."""
    top = p.cyst_diameter_mm + p.roi_step_mm / 2.0
    return np.arange(p.roi_step_mm, top, p.roi_step_mm) * 1e-3


def cnr_centres(p: PhantomConfig, offset: float = 0.0) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """
    Cyst and background ROI centres for a phantom moved by `offset`.

    The background disc sits at the cyst depth, on the side facing the
    sector centre, far enough out that the largest swept ROI stays clear
    of the cyst.
    """
    diameter = p.cyst_diameter_mm * 1e-3
    cx, cz = p.cyst_x_mm * 1e-3, p.cyst_z_mm * 1e-3
    gap = 1.75 * diameter
    background_x = cx - gap if cx > 0 else cx + gap
    return (cx + offset, cz), (background_x + offset, cz)


def measure(
    config: ExperimentConfig,
    image: SectorImage,
    metrics_dir: Path,
    noise_images: Optional[List[np.ndarray]] = None,
    moved: Optional[Sequence[Tuple[float, SectorImage]]] = None,
) -> Dict[str, Union[float, Path]]:
    """
    Write every metric the phantom supports; return the summary and files.

    Args:
        config: Experiment configuration
        image: Rendered image of the run
        metrics_dir: Directory receiving the CSV tables
        noise_images: Envelopes of noise-only realizations on the image grid
        moved: (offset, image) pairs of laterally moved phantoms for the CNR spread
    """
    written: Dict[str, Union[float, Path]] = {}
    pin_sets = []
    for row in _pin_rows(config):
        pins = [p for p in row.positions() if _in_grid(image.grid, *p)]
        if not pins:
            continue
        pin_sets.append((row, pins))
        values = signal_strength_profile(image.scanlines, image.grid, pins)
        name = f"profile_{row.depth * 1e3:.0f}mm.csv"
        written[name] = write_profile(values, pins, metrics_dir / name)

    p = config.phantom
    if p.preset == "speckle":
        region = Rect(-p.speckle_width_mm / 2e3, p.speckle_width_mm / 2e3, 1e-3, p.speckle_depth_mm * 1e-3)
        written["speckle_power_db"] = 10.0 * math.log10(
            max(mean_speckle_power(image.scanlines, image.grid, region), 1e-300))
        if p.cyst_diameter_mm > 0:
            d = min(p.roi_mm, p.cyst_diameter_mm) * 1e-3
            cyst_c, background_c = cnr_centres(p)
            written["cnr"] = cnr(image.cartesian, RoiSpec.disc(*cyst_c, d), RoiSpec.disc(*background_c, d))
            diameters = roi_diameters(p)
            sweep = cnr_sweep(image.cartesian, cyst_c, background_c, diameters)
            written["cnr_vs_roi.csv"] = write_cnr_table("roi_mm", diameters * 1e3, sweep,
                                                        metrics_dir / "cnr_vs_roi.csv")
            if moved:
                offsets, spread = [], []
                for offset, moved_image in moved:
                    cyst_c, background_c = cnr_centres(p, offset)
                    offsets.append(offset * 1e3)
                    spread.append(cnr(moved_image.cartesian, RoiSpec.disc(*cyst_c, d),
                                      RoiSpec.disc(*background_c, d)))
                written["cnr_positions.csv"] = write_cnr_table("offset_mm", offsets, spread,
                                                               metrics_dir / "cnr_positions.csv")
                written["cnr_mean"] = float(np.mean(spread))
                written["cnr_std"] = float(np.std(spread, ddof=1)) if len(spread) > 1 else 0.0

    if noise_images:
        noise_curve = noise_power(noise_images, image.grid)
        noise_db = replace(noise_curve, values=10.0 * np.log10(np.maximum(noise_curve.values, 1e-300)),
                           in_db=True)
        written["noise_power.csv"] = write_depth_curve(noise_db, metrics_dir / "noise_power.csv")
        snr = snr_plus_one(image.scanlines, image.grid, noise_curve)
        written["snr_plus_one.csv"] = write_depth_curve(snr, metrics_dir / "snr_plus_one.csv")
        depth = penetration_depth(snr)
        written["penetration_depth_mm"] = math.nan if depth is None else depth * 1e3
        for row, pins in pin_sets:
            name = f"pin_snr_{row.depth * 1e3:.0f}mm.csv"
            values = pin_snr(image.scanlines, image.grid, pins, noise_curve)
            written[name] = write_profile(values, pins, metrics_dir / name)

    summary = {k: v for k, v in written.items() if not isinstance(v, Path)}
    if summary:
        table = pd.DataFrame({"metric": list(summary), "value": list(summary.values())})
        table.to_csv(metrics_dir / "summary.csv", index=False, float_format="%.9g", lineterminator="\n")
        written["summary.csv"] = metrics_dir / "summary.csv"
    return written


def write_banks(banks: Dict[str, ReferenceBank], directory: Path) -> List[Path]:
    return [rfio.write_bank(bank, directory / f"bank_{label}.rf") for label, bank in sorted(banks.items())]


def run_pipeline(config: ExperimentConfig, progress: bool = True) -> RunResult:
    """
    Run acquisition, processing and measurement; write every artifact.

    Args:
        config: Validated experiment configuration
        progress: Show progress bars

    Returns:
        RunResult with the image, the summary metrics and the manifest path

    Raises:
        OSError: If an artifact cannot be written (the message names the path)
    """
    paths = ensure_output_paths(get_output_paths(config.output.directory))
    artifacts: List[Path] = []
    config_path = paths.root / "config.ini"
    try:
        config_path.write_text(format_config(config), encoding="utf-8")
    except OSError as exc:
        raise type(exc)(f"Cannot write {config_path}: {exc.strerror or exc}") from exc
    artifacts.append(config_path)

    geometry = config.array_geometry()
    medium: Medium = config.medium_model()
    excitation = config.make_excitation()
    banks = build_banks(excitation, geometry, medium, config.element_response(),
                        compensate=config.imaging.compensate)
    artifacts.extend(write_banks(banks, paths.references_dir))

    phantom = build_phantom(config)
    profiles = transmit_events(config, geometry)
    grid = image_grid(config)
    logger.info("Scheme %s: %d events x %d sequences, %d scatterers",
                config.scheme.name, len(profiles), len(excitation.transmissions), len(phantom))

    accumulator = ImageAccumulator(config, grid)
    items = enumerate(profiles)
    if progress:
        items = tqdm(items, total=len(profiles), desc="Transmit events", unit="event")
    for index, profile in items:
        frames = acquire_event(config, profile, phantom, index)
        for label, frame in frames.items():
            artifacts.append(rfio.write_rf(frame, paths.frames_dir / frame_name(index, label)))
        data = receive_event(config, frames, banks)
        stored = RFFrame(np.asarray(data.samples), data.sample_rate, getattr(data, "origin", data.t0))
        artifacts.append(rfio.write_rf(stored, paths.mf_dir / frame_name(index, "C")))
        accumulator.add(index, data)

    image = form_image(config, accumulator.finish(), grid)
    artifacts.extend(rfio.write_image(image.scanlines, grid, paths.images_dir / "image.rf"))
    artifacts.append(rfio.write_pgm(image.gray(config.imaging.dynamic_range_db),
                                    paths.images_dir / "image.pgm"))

    noise_images = None
    if config.noise.power > 0:
        noise_images = noise_envelopes(config, banks, grid, progress)
        for k, envelope in enumerate(noise_images, start=1):
            artifacts.extend(rfio.write_image(envelope, grid, paths.images_dir / f"noise_r{k:02d}.rf"))

    moved: Optional[List[Tuple[float, SectorImage]]] = None
    p = config.phantom
    if p.preset == "speckle" and p.cyst_diameter_mm > 0 and p.positions > 1:
        moved = moved_images(config, phantom, banks, grid, progress)
        for k, (_, moved_image) in enumerate(moved, start=1):
            artifacts.extend(rfio.write_image(moved_image.scanlines, grid,
                                              paths.images_dir / f"position_{k:02d}.rf"))

    written = measure(config, image, paths.metrics_dir, noise_images, moved)
    artifacts.extend(v for v in written.values() if isinstance(v, Path))
    summary = {k: float(v) for k, v in written.items() if not isinstance(v, Path)}

    manifest = rfio.write_manifest(paths.root, artifacts)
    logger.info("Run complete: %d artifacts in %s", len(artifacts), paths.root)
    return RunResult(paths=paths, image=image, artifacts=artifacts, summary=summary, manifest=manifest)
