#!/usr/bin/env python3
"""
Delay-and-sum beamforming, gain stages and B-mode rendering.

Three receive beamformers share one delay-and-sum core: diverging-wave
(virtual source transmit timing), synthetic transmit aperture (dynamic
transmit and receive focusing summed over single-element events) and
conventional single-focus sector scanning (one scan line per steered beam).
Rendering covers envelope detection, log compression to a fixed dynamic
range with a target mean brightness, and polar-to-Cartesian scan conversion.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
from scipy import interpolate, optimize, signal
from tqdm import tqdm

from codedwave.acoustics import RFFrame
from codedwave.receiver import MFOutput
from codedwave.txprofiles import ArrayGeometry, ScanBeam

logger = logging.getLogger(__name__)

DYNAMIC_RANGE_DB = 60.0
TARGET_MEAN_DB = 32.0
FIXED_GAIN_DB = 22.0
TGC_DB_PER_CM = 2.3
RANGE_DECIMATION = 4

ChannelData = Union[RFFrame, MFOutput]


@dataclass(frozen=True)
class PolarGrid:
    """Sector sampling lattice centred on the array centre."""

    angles: np.ndarray  # degrees
    ranges: np.ndarray  # metres

    def __post_init__(self) -> None:
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float))
        object.__setattr__(self, "ranges", np.asarray(self.ranges, dtype=float))
        for name, axis in (("angles", self.angles), ("ranges", self.ranges)):
            if axis.ndim != 1 or axis.size == 0:
                raise ValueError(f"Grid {name} must be a non-empty vector")
            if axis.size > 1 and np.any(np.diff(axis) <= 0):
                raise ValueError(f"Grid {name} must be strictly increasing")
        if np.any(self.ranges <= 0):
            raise ValueError("Grid ranges must be positive")
        if np.any(np.abs(self.angles) >= 90.0):
            raise ValueError("Grid angles must lie within (-90, 90) degrees")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.angles.size, self.ranges.size)

    @property
    def range_step(self) -> float:
        return float(self.ranges[1] - self.ranges[0]) if self.ranges.size > 1 else 0.0

    def points(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cartesian (x, z) of every grid node, shape (angles, ranges)."""
        theta = np.radians(self.angles)[:, None]
        return self.ranges[None, :] * np.sin(theta), self.ranges[None, :] * np.cos(theta)

    @classmethod
    def sector(
        cls,
        r_max: float,
        r_min: float = 1e-3,
        half_angle: float = 45.0,
        angle_step: float = 0.5,
        c: float = 1450.0,
        sample_rate: float = 80e6,
        decimation: int = RANGE_DECIMATION,
    ) -> "PolarGrid":
        """Symmetric sector with range step c / (2 fs) * decimation."""
        n_angles = int(round(2 * half_angle / angle_step)) + 1
        step = c / (2.0 * sample_rate) * decimation
        n_ranges = int(math.floor((r_max - r_min) / step)) + 1
        return cls(
            angles=np.linspace(-half_angle, half_angle, n_angles),
            ranges=r_min + step * np.arange(n_ranges),
        )

    @classmethod
    def around_row(
        cls,
        depth: float,
        half_width: float,
        margin: float = 3e-3,
        angle_step: float = 0.5,
        range_step: float = 1450.0 / (2.0 * 80e6) * RANGE_DECIMATION,
    ) -> "PolarGrid":
        """Narrow band covering a horizontal pin row of lateral extent ±half_width."""
        edge = math.degrees(math.atan2(half_width, depth)) + math.degrees(margin / depth)
        edge = min(math.ceil(edge / angle_step) * angle_step, 89.0)
        n_angles = int(round(2 * edge / angle_step)) + 1
        r_lo = max(depth - margin, range_step)
        r_hi = math.hypot(half_width, depth) + margin
        n_ranges = int(math.floor((r_hi - r_lo) / range_step)) + 1
        return cls(
            angles=np.linspace(-edge, edge, n_angles),
            ranges=r_lo + range_step * np.arange(n_ranges),
        )


class CartesianRaster(NamedTuple):
    """Scan-converted image; NaN marks background outside the sector."""
    values: np.ndarray  # (nz, nx)
    x: np.ndarray
    z: np.ndarray

    @property
    def in_sector(self) -> np.ndarray:
        return np.isfinite(self.values)


@dataclass(frozen=True)
class SectorImage:
    """Beamformed envelope on a polar grid with its rendered forms."""

    scanlines: np.ndarray
    grid: PolarGrid
    compressed: np.ndarray
    cartesian: CartesianRaster
    meta: Dict[str, Any] = field(default_factory=dict)

    def gray(self, dynamic_range: float = DYNAMIC_RANGE_DB) -> np.ndarray:
        return to_gray(self.cartesian, dynamic_range)


def _channel_arrays(data: ChannelData) -> Tuple[np.ndarray, float, float]:
    origin = getattr(data, "origin", data.t0)
    return np.asarray(data.samples), float(data.sample_rate), float(origin)


def _interp(row: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Linear interpolation of `row` at fractional indices; zero outside."""
    k = np.floor(u).astype(np.int64)
    w = u - k
    valid = (k >= 0) & (k < row.size - 1)
    kc = np.where(valid, k, 0)
    out = (1.0 - w) * row[kc] + w * row[kc + 1]
    return np.where(valid, out, 0.0)


def _das(data: ChannelData, t_tx: np.ndarray, x: np.ndarray, z: np.ndarray,
         geometry: ArrayGeometry, c: float) -> np.ndarray:
    samples, fs, origin = _channel_arrays(data)
    if samples.shape[0] != geometry.n_elements:
        raise ValueError(
            f"Channel data has {samples.shape[0]} channels for {geometry.n_elements} elements"
        )
    if np.any(z <= 0):
        raise ValueError("Image points must lie in front of the array (z > 0)")
    out = np.zeros(np.broadcast(t_tx, x).shape, dtype=samples.dtype if np.iscomplexobj(samples) else float)
    for row, xi in zip(samples, geometry.element_x):
        t = t_tx + np.hypot(x - xi, z) / c
        out += _interp(row, (t - origin) * fs)
    return out


def apply_gain(
    frame: RFFrame,
    fixed_db: float = FIXED_GAIN_DB,
    tgc_db_per_cm: float = TGC_DB_PER_CM,
    c: float = 1450.0,
) -> RFFrame:
    """Fixed gain plus depth-linear time gain compensation."""
    depth_cm = c * frame.time_axis / 2.0 * 100.0
    gain = 10.0 ** ((fixed_db + tgc_db_per_cm * depth_cm) / 20.0)
    return RFFrame(samples=frame.samples * gain[None, :], sample_rate=frame.sample_rate, t0=frame.t0)


def das_dw(
    mf: ChannelData,
    r_v: float,
    grid: PolarGrid,
    geometry: ArrayGeometry,
    c: float = 1450.0,
    source_x: float = 0.0,
) -> np.ndarray:
    """
    Delay-and-sum for a diverging wave from a virtual source at (source_x, -r_v).

    Transmit time to point p is (|p - v| - r_v) / c; receive times are the
    element distances over c; channel data is linearly interpolated.

    Returns:
        Scan-line matrix of shape grid.shape
    """
    if r_v < 0:
        raise ValueError(f"Virtual source distance must be non-negative, got {r_v}")
    x, z = grid.points()
    t_tx = (np.hypot(x - source_x, z + r_v) - r_v) / c
    return _das(mf, t_tx, x, z, geometry, c)


def das_sta(
    mf_set: Sequence[ChannelData],
    grid: PolarGrid,
    geometry: ArrayGeometry,
    c: float = 1450.0,
    tx_elements: Optional[Sequence[int]] = None,
    progress: bool = True,
) -> np.ndarray:
    """
    Synthetic transmit aperture: coherent sum of single-element beamformings.

    Args:
        mf_set: One correlator output per transmit event
        grid: Image grid
        geometry: Array geometry
        c: Sound speed
        tx_elements: Element fired in each event (default 0..N-1)
        progress: Show a progress bar over transmit events

    Returns:
        Scan-line matrix of shape grid.shape

    Raises:
        ValueError: If events are missing
    """
    if tx_elements is None:
        if len(mf_set) != geometry.n_elements:
            raise ValueError(
                f"Missing transmit events: got {len(mf_set)} of {geometry.n_elements}"
            )
        tx_elements = range(geometry.n_elements)
    elif len(tx_elements) != len(mf_set):
        raise ValueError(f"{len(mf_set)} events but {len(tx_elements)} transmit elements")

    ex = geometry.element_x
    out: Optional[np.ndarray] = None
    events = zip(tx_elements, mf_set)
    if progress:
        events = tqdm(events, total=len(mf_set), desc="STA beamforming", unit="tx", leave=False)
    for j, mf in events:
        part = das_dw(mf, 0.0, grid, geometry, c, source_x=float(ex[j]))
        out = part if out is None else out + part
    return out if out is not None else np.zeros(grid.shape)


def gaussian_bandpass(
    scanlines: np.ndarray,
    range_step: float,
    c: float = 1450.0,
    center_freq: float = 7.5e6,
    fractional_bw: float = 0.70,
) -> np.ndarray:
    """Zero-phase Gaussian band-pass along range, -6 dB width fractional_bw * f0."""
    fs = c / (2.0 * range_step)
    n = scanlines.shape[-1]
    freqs = np.fft.fftfreq(n, 1.0 / fs)
    sigma = fractional_bw * center_freq / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    response = np.exp(-((np.abs(freqs) - center_freq) ** 2) / (2.0 * sigma ** 2))
    filtered = np.fft.ifft(np.fft.fft(scanlines, axis=-1) * response, axis=-1)
    return filtered if np.iscomplexobj(scanlines) else filtered.real


def das_csf(
    frames: Sequence[ChannelData],
    plan: Sequence[ScanBeam],
    ranges: np.ndarray,
    geometry: ArrayGeometry,
    c: float = 1450.0,
    bandpass: Optional[Tuple[float, float]] = (7.5e6, 0.70),
    progress: bool = True,
) -> np.ndarray:
    """
    Conventional single-focus imaging: one dynamically received line per beam.

    Args:
        frames: One frame (raw or correlated) per plan entry
        plan: Steering angle and focus of every beam
        ranges: Range samples along each beam axis
        geometry: Array geometry
        c: Sound speed
        bandpass: (centre, fractional bandwidth) of the Gaussian filter applied
            to every line, or None to skip it
        progress: Show a progress bar over beams

    Returns:
        Scan-line matrix of shape (beams, ranges)

    Raises:
        ValueError: If the plan and frame counts differ
    """
    if len(frames) != len(plan):
        raise ValueError(f"Plan has {len(plan)} beams but {len(frames)} frames were given")
    ranges = np.asarray(ranges, dtype=float)
    ex = geometry.element_x
    lines: List[np.ndarray] = []
    beams = zip(plan, frames)
    if progress:
        beams = tqdm(beams, total=len(plan), desc="CSF beamforming", unit="beam", leave=False)
    for beam, frame in beams:
        theta = math.radians(beam.steer_angle)
        fx, fz = beam.focus_range * math.sin(theta), beam.focus_range * math.cos(theta)
        lead = float(np.max(np.hypot(fx - ex, fz)))
        x, z = ranges * math.sin(theta), ranges * math.cos(theta)
        t_tx = (lead - beam.focus_range + ranges) / c
        lines.append(_das(frame, t_tx, x, z, geometry, c))

    if not lines:
        return np.zeros((0, ranges.size))
    scanlines = np.vstack(lines)
    if bandpass is not None and ranges.size > 1:
        scanlines = gaussian_bandpass(scanlines, float(ranges[1] - ranges[0]), c, *bandpass)
    return scanlines


def envelope(scanlines: np.ndarray) -> np.ndarray:
    """Envelope along range: magnitude of the analytic signal."""
    if np.iscomplexobj(scanlines):
        return np.abs(scanlines)
    return np.abs(signal.hilbert(scanlines, axis=-1))


def log_compress(
    env: np.ndarray,
    dynamic_range_db: float = DYNAMIC_RANGE_DB,
    target_mean_db: Optional[float] = TARGET_MEAN_DB,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Map an envelope to [0, dynamic_range] dB and shift it to a target mean.

    The peak maps to dynamic_range; one global dB offset then sets the mean
    of the pixels above the clip floor (within `mask`) to target_mean_db.

    Raises:
        ValueError: On negative input or an all-zero envelope
    """
    env = np.asarray(env, dtype=float)
    if np.any(env < 0):
        raise ValueError("Envelope values must be non-negative")
    peak = float(np.max(env)) if env.size else 0.0
    if peak <= 0:
        raise ValueError("Cannot log-compress an all-zero envelope")

    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak) + dynamic_range_db
    db = np.clip(db, 0.0, dynamic_range_db)
    if target_mean_db is None:
        return db

    selected = db > 0.0
    if mask is not None:
        selected &= mask
    if not np.any(selected):
        return db
    values = db[selected]

    def mean_error(offset: float) -> float:
        return float(np.mean(np.clip(values + offset, 0.0, dynamic_range_db))) - target_mean_db

    offset = optimize.brentq(mean_error, -dynamic_range_db, dynamic_range_db, xtol=1e-6)
    return np.clip(db + offset, 0.0, dynamic_range_db)


def _cartesian_axes(grid: PolarGrid, pixel_size: float) -> Tuple[np.ndarray, np.ndarray]:
    th_lo, th_hi = math.radians(grid.angles[0]), math.radians(grid.angles[-1])
    r_lo, r_hi = float(grid.ranges[0]), float(grid.ranges[-1])
    x_lo = r_hi * math.sin(th_lo) if th_lo < 0 else r_lo * math.sin(th_lo)
    x_hi = r_hi * math.sin(th_hi) if th_hi > 0 else r_lo * math.sin(th_hi)
    z_lo = r_lo * min(math.cos(th_lo), math.cos(th_hi))
    z_hi = r_hi if th_lo <= 0 <= th_hi else r_hi * max(math.cos(th_lo), math.cos(th_hi))
    nx = int(math.floor((x_hi - x_lo) / pixel_size)) + 1
    nz = int(math.floor((z_hi - z_lo) / pixel_size)) + 1
    return x_lo + pixel_size * np.arange(nx), z_lo + pixel_size * np.arange(nz)


def scan_convert(
    values: np.ndarray,
    grid: PolarGrid,
    pixel_size: float = 0.1e-3,
) -> CartesianRaster:
    """
    Bilinear polar-to-Cartesian resampling; background pixels are NaN.

    Args:
        values: Matrix of shape grid.shape
        grid: Polar grid of `values`
        pixel_size: Cartesian pixel pitch in metres

    Returns:
        CartesianRaster with rows along depth z and columns along x
    """
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"Values of shape {values.shape} do not match grid {grid.shape}")
    x, z = _cartesian_axes(grid, pixel_size)
    xx, zz = np.meshgrid(x, z)
    rr = np.hypot(xx, zz)
    tt = np.degrees(np.arctan2(xx, zz))

    angles, ranges = grid.angles, grid.ranges
    if angles.size == 1:
        angles = np.array([angles[0] - 1e-9, angles[0] + 1e-9])
        values = np.repeat(values, 2, axis=0)
    if ranges.size == 1:
        ranges = np.array([ranges[0] - 1e-12, ranges[0] + 1e-12])
        values = np.repeat(values, 2, axis=1)
    interpolator = interpolate.RegularGridInterpolator(
        (angles, ranges), values, method="linear", bounds_error=False, fill_value=np.nan
    )
    raster = interpolator(np.stack([tt.ravel(), rr.ravel()], axis=-1)).reshape(xx.shape)
    return CartesianRaster(values=raster, x=x, z=z)


def to_gray(raster: CartesianRaster, dynamic_range: float = DYNAMIC_RANGE_DB) -> np.ndarray:
    """8-bit gray levels, dynamic range mapped linearly to [0, 255], background 0."""
    values = np.nan_to_num(raster.values, nan=0.0)
    return np.clip(np.round(values / dynamic_range * 255.0), 0, 255).astype(np.uint8)


def render(
    scanlines: np.ndarray,
    grid: PolarGrid,
    meta: Optional[Dict[str, Any]] = None,
    dynamic_range_db: float = DYNAMIC_RANGE_DB,
    target_mean_db: Optional[float] = TARGET_MEAN_DB,
    pixel_size: float = 0.1e-3,
) -> SectorImage:
    """Envelope-detect, compress and scan-convert beamformed lines."""
    env = envelope(scanlines)
    compressed = log_compress(env, dynamic_range_db, target_mean_db)
    raster = scan_convert(compressed, grid, pixel_size)
    return SectorImage(scanlines=env, grid=grid, compressed=compressed,
                       cartesian=raster, meta=dict(meta or {}))
