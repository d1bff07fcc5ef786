#!/usr/bin/env python3
"""
Image quality measures: depth curves of noise and speckle power, SNR+1,
penetration depth, CNR and its ROI-size sweep, pin signal-strength
profiles, per-pin SNR and SSR.

Power measures work on linear envelope values sampled on the polar grid;
CNR works on log-compressed pixels of the scan-converted raster.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd

from codedwave.acoustics import Rect
from codedwave.beamform import CartesianRaster, PolarGrid

logger = logging.getLogger(__name__)

DEPTH_BIN = 1e-3
PENETRATION_THRESHOLD_DB = 6.0
DEBOUNCE_BINS = 2
PIN_WINDOW = 1e-3
ANNULUS_INNER = 2e-3
ANNULUS_OUTER = 4e-3
MIN_ROI_PIXELS = 8

PathLike = Union[str, Path]


@dataclass(frozen=True)
class DepthCurve:
    """Values per depth bin; `in_db` is False for linear powers."""

    depths: np.ndarray
    values: np.ndarray
    in_db: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "depths", np.asarray(self.depths, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.depths.shape != self.values.shape or self.depths.ndim != 1:
            raise ValueError(
                f"Depth curve needs equal-length vectors, got {self.depths.shape} and {self.values.shape}"
            )
        if self.depths.size > 1 and np.any(np.diff(self.depths) <= 0):
            raise ValueError("Curve depths must be strictly increasing")

    def __len__(self) -> int:
        return int(self.depths.size)


class RoiShape(Enum):
    DISC = "disc"
    RECTANGLE = "rectangle"


@dataclass(frozen=True)
class RoiSpec:
    """Evaluation region on the Cartesian raster.

    `size` is the diameter of a disc or the (width, height) of a rectangle.
    """

    shape: RoiShape
    center: Tuple[float, float]
    size: Union[float, Tuple[float, float]]

    @classmethod
    def disc(cls, x: float, z: float, diameter: float) -> "RoiSpec":
        return cls(RoiShape.DISC, (x, z), diameter)

    @classmethod
    def rectangle(cls, x: float, z: float, width: float, height: float) -> "RoiSpec":
        return cls(RoiShape.RECTANGLE, (x, z), (width, height))

    def half_extent(self) -> Tuple[float, float]:
        if self.shape is RoiShape.DISC:
            radius = float(self.size) / 2.0  # type: ignore[arg-type]
            return radius, radius
        width, height = self.size  # type: ignore[misc]
        return width / 2.0, height / 2.0

    def mask(self, raster: CartesianRaster) -> np.ndarray:
        """Pixels of `raster` inside the region.

        Raises:
            ValueError: If the region is not fully inside the image sector
        """
        cx, cz = self.center
        hx, hz = self.half_extent()
        if (cx - hx < raster.x[0] or cx + hx > raster.x[-1]
                or cz - hz < raster.z[0] or cz + hz > raster.z[-1]):
            raise ValueError(f"ROI at ({cx * 1e3:.1f}, {cz * 1e3:.1f}) mm extends beyond the image")
        xx, zz = np.meshgrid(raster.x, raster.z)
        if self.shape is RoiShape.DISC:
            inside = np.hypot(xx - cx, zz - cz) <= hx
        else:
            inside = (np.abs(xx - cx) <= hx) & (np.abs(zz - cz) <= hz)
        if np.any(inside & ~raster.in_sector):
            raise ValueError(f"ROI at ({cx * 1e3:.1f}, {cz * 1e3:.1f}) mm leaves the image sector")
        return inside


def _depth_bins(grid: PolarGrid, bin_size: float,
                region: Optional[Rect]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, z = grid.points()
    keep = np.ones(x.shape, dtype=bool)
    if region is not None:
        keep = (x >= region.x_min) & (x <= region.x_max) & (z >= region.z_min) & (z <= region.z_max)
    index = np.floor(z / bin_size).astype(np.int64)
    bins = np.unique(index[keep])
    return index, keep, bins


def power_curve(
    images: Sequence[np.ndarray],
    grid: PolarGrid,
    bin_size: float = DEPTH_BIN,
    region: Optional[Rect] = None,
) -> DepthCurve:
    """
    Mean squared value per depth bin across lateral extent and images.

    Depth is z = r cos(theta); bins are `bin_size` wide and reported at
    their centres. Only bins holding at least one pixel are returned.

    Raises:
        ValueError: On an empty image list or a grid mismatch
    """
    if not images:
        raise ValueError("Need at least one image to estimate a power curve")
    stack = np.stack([np.abs(np.asarray(img)) ** 2 for img in images])
    if stack.shape[1:] != grid.shape:
        raise ValueError(f"Images of shape {stack.shape[1:]} do not match grid {grid.shape}")
    index, keep, bins = _depth_bins(grid, bin_size, region)
    if bins.size == 0:
        raise ValueError("No pixels fall inside the evaluation region")
    per_pixel = stack.mean(axis=0)[keep]
    sums = np.bincount(index[keep] - bins[0], weights=per_pixel)
    counts = np.bincount(index[keep] - bins[0])
    values = sums[bins - bins[0]] / counts[bins - bins[0]]
    return DepthCurve(depths=(bins + 0.5) * bin_size, values=values, in_db=False)


def noise_power(
    noise_images: Sequence[np.ndarray],
    grid: PolarGrid,
    bin_size: float = DEPTH_BIN,
    region: Optional[Rect] = None,
) -> DepthCurve:
    """Noise power per depth from independent noise-only acquisitions."""
    logger.debug("Averaging %d noise realizations", len(noise_images))
    return power_curve(noise_images, grid, bin_size, region)


def snr_plus_one(
    speckle_image: np.ndarray,
    grid: PolarGrid,
    noise_curve: DepthCurve,
    bin_size: float = DEPTH_BIN,
    region: Optional[Rect] = None,
) -> DepthCurve:
    """
    10 log10(P_speckle / P_noise + 1) per depth bin.

    Raises:
        ValueError: On mismatched depth axes or a zero noise power
    """
    speckle = power_curve([speckle_image], grid, bin_size, region)
    if speckle.depths.shape != noise_curve.depths.shape or not np.allclose(
            speckle.depths, noise_curve.depths):
        raise ValueError("Speckle and noise curves have different depth axes")
    if np.any(noise_curve.values <= 0):
        raise ValueError("Noise power is zero in at least one depth bin")
    return DepthCurve(
        depths=speckle.depths,
        values=10.0 * np.log10(speckle.values / noise_curve.values + 1.0),
    )


def mean_speckle_power(image: np.ndarray, grid: PolarGrid, region: Optional[Rect] = None) -> float:
    """Mean squared envelope over the whole region."""
    values = np.abs(np.asarray(image)) ** 2
    if region is None:
        return float(values.mean())
    _, keep, _ = _depth_bins(grid, DEPTH_BIN, region)
    if not np.any(keep):
        raise ValueError("No pixels fall inside the speckle region")
    return float(values[keep].mean())


def penetration_depth(
    curve: DepthCurve,
    threshold_db: float = PENETRATION_THRESHOLD_DB,
    debounce: int = DEBOUNCE_BINS,
) -> Optional[float]:
    """
    First depth where the curve drops below the threshold and stays below.

    Returns:
        Depth in metres, or None when the curve never drops (beyond range)
    """
    below = curve.values < threshold_db
    n = below.size
    for i in np.flatnonzero(below):
        if np.all(below[i:min(i + debounce + 1, n)]):
            return float(curve.depths[i])
    return None


def cnr(
    log_image: CartesianRaster,
    cyst_roi: RoiSpec,
    background_roi: RoiSpec,
    min_pixels: int = MIN_ROI_PIXELS,
) -> float:
    """
    |mu_C - mu_B| / sqrt(var_C + var_B) over log-compressed pixels.

    Raises:
        ValueError: On overlapping regions or a region with too few pixels
    """
    cyst = cyst_roi.mask(log_image)
    background = background_roi.mask(log_image)
    if np.any(cyst & background):
        raise ValueError("Cyst and background ROIs overlap")
    for name, mask in (("cyst", cyst), ("background", background)):
        if int(mask.sum()) < min_pixels:
            raise ValueError(f"The {name} ROI holds {int(mask.sum())} pixels; at least {min_pixels} needed")
    c_vals = log_image.values[cyst]
    b_vals = log_image.values[background]
    spread = math.sqrt(float(np.var(c_vals) + np.var(b_vals)))
    if spread == 0:
        raise ValueError("Both ROIs are constant; CNR is undefined")
    return abs(float(np.mean(c_vals) - np.mean(b_vals))) / spread



def cnr_sweep(
    log_image: CartesianRaster,
    cyst_center: Tuple[float, float],
    background_center: Tuple[float, float],
    diameters: Sequence[float],
    min_pixels: int = MIN_ROI_PIXELS,
) -> np.ndarray:
    """
    CNR of equal disc ROIs at fixed centres, one value per ROI diameter.

    Raises:
        ValueError: If any diameter gives an invalid ROI pair
    """
    values = []
    for d in diameters:
        cyst_roi = RoiSpec.disc(cyst_center[0], cyst_center[1], d)
        background_roi = RoiSpec.disc(background_center[0], background_center[1], d)
        values.append(cnr(log_image, cyst_roi, background_roi, min_pixels))
    return np.array(values, dtype=float)


def _locate(grid: PolarGrid, pin: Tuple[float, float]) -> Tuple[float, float]:
    px, pz = pin
    r = math.hypot(px, pz)
    theta = math.degrees(math.atan2(px, pz))
    if not (grid.ranges[0] <= r <= grid.ranges[-1] and grid.angles[0] <= theta <= grid.angles[-1]):
        raise ValueError(f"Pin at ({px * 1e3:.1f}, {pz * 1e3:.1f}) mm lies outside the image")
    return r, theta


def _pin_power(envelope: np.ndarray, grid: PolarGrid, pin: Tuple[float, float],
               window: float, x: np.ndarray, z: np.ndarray) -> float:
    _locate(grid, pin)
    near = (np.abs(x - pin[0]) <= window) & (np.abs(z - pin[1]) <= window)
    if not np.any(near):
        raise ValueError(f"No grid node within {window * 1e3:.1f} mm of pin {pin}")
    return float(np.max(np.abs(envelope[near]) ** 2))


def _db(power: float) -> float:
    return 10.0 * math.log10(power) if power > 0 else -math.inf


def signal_strength_profile(
    envelope: np.ndarray,
    grid: PolarGrid,
    pin_positions: Sequence[Tuple[float, float]],
    window: float = PIN_WINDOW,
) -> np.ndarray:
    """
    Peak squared envelope near every pin, in dB re 1.

    Args:
        envelope: Linear envelope on `grid`
        grid: Polar grid of the envelope
        pin_positions: Nominal (x, z) of each pin in metres
        window: Half-width of the square search window

    Returns:
        One dB value per pin

    Raises:
        ValueError: If a pin lies outside the image
    """
    envelope = np.asarray(envelope)
    if envelope.shape != grid.shape:
        raise ValueError(f"Envelope of shape {envelope.shape} does not match grid {grid.shape}")
    x, z = grid.points()
    return np.array([_db(_pin_power(envelope, grid, pin, window, x, z)) for pin in pin_positions])


def ssr(
    envelope: np.ndarray,
    grid: PolarGrid,
    pin_position: Tuple[float, float],
    inner: float = ANNULUS_INNER,
    outer: float = ANNULUS_OUTER,
    window: float = PIN_WINDOW,
) -> float:
    """
    Signal-to-speckle ratio: pin peak power over the mean power of an annulus.

    Raises:
        ValueError: If the annulus leaves the image sector
    """
    envelope = np.asarray(envelope)
    r, theta = _locate(grid, pin_position)
    spread = math.degrees(math.asin(min(outer / r, 1.0)))
    if (r - outer < grid.ranges[0] or r + outer > grid.ranges[-1]
            or theta - spread < grid.angles[0] or theta + spread > grid.angles[-1]):
        raise ValueError(f"Annulus of {outer * 1e3:.1f} mm around pin {pin_position} leaves the sector")
    x, z = grid.points()
    peak = _pin_power(envelope, grid, pin_position, window, x, z)
    dist = np.hypot(x - pin_position[0], z - pin_position[1])
    ring = (dist >= inner) & (dist <= outer)
    speckle = float(np.mean(np.abs(envelope[ring]) ** 2))
    if speckle <= 0:
        raise ValueError("Annulus around the pin holds no speckle power")
    return 10.0 * math.log10(peak / speckle)



def pin_snr(
    envelope: np.ndarray,
    grid: PolarGrid,
    pin_positions: Sequence[Tuple[float, float]],
    noise_curve: DepthCurve,
    bin_size: float = DEPTH_BIN,
    window: float = PIN_WINDOW,
) -> np.ndarray:
    """
    Pin peak power over the noise power of the pin's depth bin, in dB.

    Args:
        envelope: Linear envelope on `grid`
        grid: Polar grid of the envelope
        pin_positions: Nominal (x, z) of each pin in metres
        noise_curve: Linear noise power per depth bin
        bin_size: Bin width the noise curve was estimated with
        window: Half-width of the pin search window

    Raises:
        ValueError: If the curve is in dB or holds no positive power at a pin depth
    """
    if noise_curve.in_db:
        raise ValueError("Pin SNR needs a linear noise power curve")
    strengths = signal_strength_profile(envelope, grid, pin_positions, window)
    values = []
    for pin, strength in zip(pin_positions, strengths):
        centre = (math.floor(pin[1] / bin_size) + 0.5) * bin_size
        match = np.flatnonzero(np.isclose(noise_curve.depths, centre, rtol=0.0, atol=bin_size * 1e-6))
        if match.size == 0 or noise_curve.values[match[0]] <= 0:
            raise ValueError(
                f"No noise power at the depth of pin ({pin[0] * 1e3:.1f}, {pin[1] * 1e3:.1f}) mm"
            )
        values.append(strength - 10.0 * math.log10(noise_curve.values[match[0]]))
    return np.array(values)


def write_depth_curve(curve: DepthCurve, path: PathLike) -> Path:
    """Write `depth_mm,value_db` CSV."""
    path = Path(path)
    frame = pd.DataFrame({"depth_mm": curve.depths * 1e3, "value_db": curve.values})
    frame.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    return path


def read_depth_curve(path: PathLike) -> DepthCurve:
    frame = pd.read_csv(path)
    return DepthCurve(depths=frame["depth_mm"].to_numpy() * 1e-3, values=frame["value_db"].to_numpy())


def write_profile(values: Sequence[float], pin_positions: Sequence[Tuple[float, float]],
                  path: PathLike) -> Path:
    """Write `pin_index,x_mm,value_db` CSV."""
    path = Path(path)
    frame = pd.DataFrame({
        "pin_index": np.arange(len(pin_positions)),
        "x_mm": [p[0] * 1e3 for p in pin_positions],
        "value_db": list(values),
    })
    frame.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    return path


def write_cnr_table(key: str, keys_mm: Sequence[float], values: Sequence[float], path: PathLike) -> Path:
    """Write `<key>,cnr` CSV, keys in millimetres."""
    path = Path(path)
    frame = pd.DataFrame({key: list(keys_mm), "cnr": list(values)})
    frame.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    return path


def read_metric_table(path: PathLike) -> pd.DataFrame:
    """Load either metric CSV layout."""
    frame = pd.read_csv(path)
    if "value_db" not in frame.columns:
        raise ValueError(f"{path} is not a metric table (no value_db column)")
    return frame


def compare_tables(first: PathLike, second: PathLike) -> pd.DataFrame:
    """
    Row-wise difference of two metric CSVs sharing a key column.

    Returns:
        DataFrame of key, both values and their difference (second - first)

    Raises:
        ValueError: If the tables use different layouts
    """
    a, b = read_metric_table(first), read_metric_table(second)
    key = "depth_mm" if "depth_mm" in a.columns else "pin_index"
    if key not in b.columns:
        raise ValueError(f"{first} and {second} use different metric layouts")
    merged = pd.merge(a[[key, "value_db"]], b[[key, "value_db"]], on=key, how="outer",
                      suffixes=("_first", "_second"))
    merged["diff_db"] = merged["value_db_second"] - merged["value_db_first"]
    return merged

