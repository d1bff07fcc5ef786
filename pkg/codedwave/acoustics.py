#!/usr/bin/env python3
"""
Point-scatterer RF synthesis with frequency-dependent attenuation.

The simulator is a linear single-scattering model: every active transmit
element j and receive element i see scatterer s through the two-way echo
shape (excitation convolved with the two-way element response), delayed by
the firing delay plus the path |e_j - s| + |s - e_i| over c, scaled by the
spherical spreading 1/(|e_j - s| |s - e_i|) and low-pass filtered by the
medium attenuation over that path.

Attenuation filtering is handled by depositing every contribution into
impulse trains indexed by path length on a fine grid (linear interpolation
between neighbouring nodes), then convolving each train with the echo shape
attenuated to that node's path length.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy import fft as sp_fft
from scipy import signal
from tqdm import tqdm

from codedwave.txprofiles import ArrayGeometry, DelayProfile

logger = logging.getLogger(__name__)

# Configure progress bar for better visibility in all terminals
tqdm.monitor_interval = 0

DEFAULT_SAMPLE_RATE = 80e6
DEFAULT_MAX_DEPTH = 75e-3
DEFAULT_PATH_STEP = 1e-3


@dataclass(frozen=True)
class Medium:
    """Propagation medium; attenuation 0 models fresh water."""

    sound_speed: float = 1450.0
    attenuation: float = 0.5  # dB / (MHz cm)

    def __post_init__(self) -> None:
        if self.sound_speed <= 0:
            raise ValueError(f"Sound speed must be positive, got {self.sound_speed}")
        if self.attenuation < 0:
            raise ValueError(f"Attenuation must be non-negative, got {self.attenuation}")

    def lossless(self) -> "Medium":
        return Medium(sound_speed=self.sound_speed, attenuation=0.0)


@dataclass(frozen=True)
class Phantom:
    """Point scatterers in front of the array plus the medium they sit in."""

    x: np.ndarray
    z: np.ndarray
    reflectivity: np.ndarray
    medium: Medium = field(default_factory=Medium)
    label: str = ""

    def __post_init__(self) -> None:
        if not (self.x.shape == self.z.shape == self.reflectivity.shape):
            raise ValueError("Scatterer coordinate and reflectivity arrays differ in shape")
        if self.z.size and np.any(self.z <= 0):
            raise ValueError("All scatterers must lie in front of the array (z > 0)")
        if not np.all(np.isfinite(self.reflectivity)):
            raise ValueError("Scatterer reflectivities must be finite")

    def __len__(self) -> int:
        return int(self.x.size)

    @property
    def scatterers(self) -> List[Tuple[float, float, float]]:
        return list(zip(self.x.tolist(), self.z.tolist(), self.reflectivity.tolist()))


@dataclass(frozen=True)
class RFFrame:
    """Channel-major receive samples of one transmission event."""

    samples: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    t0: float = 0.0

    def __post_init__(self) -> None:
        if self.samples.ndim != 2:
            raise ValueError(f"RF samples must be 2-D (channels x samples), got {self.samples.ndim}-D")
        if self.sample_rate <= 0:
            raise ValueError(f"Sample rate must be positive, got {self.sample_rate}")

    @property
    def n_elements(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1])

    @property
    def time_axis(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate


@dataclass(frozen=True)
class ElementResponse:
    """Two-way electro-mechanical response of an array element."""

    impulse: np.ndarray
    center_freq: float
    fractional_bandwidth: float
    sample_rate: float


class Rect(NamedTuple):
    """Axis-aligned region in metres."""
    x_min: float
    x_max: float
    z_min: float
    z_max: float

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.z_max - self.z_min)


class Cyst(NamedTuple):
    """Anechoic disc."""
    x: float
    z: float
    diameter: float


class PinLayout(Enum):
    """Pin target presets of the commercial phantom."""
    VERTICAL_PINS = "vertical_pins"
    HORIZONTAL_PINS_20MM = "horizontal_pins_20mm"
    HORIZONTAL_PINS_25MM = "horizontal_pins_25mm"
    HORIZONTAL_PINS_40MM = "horizontal_pins_40mm"
    FULL_MODEL550 = "full_model550"


class PinRow(NamedTuple):
    """A horizontal row of equally spaced pins centred on x = 0."""
    depth: float
    n_pins: int
    spacing: float

    def positions(self) -> List[Tuple[float, float]]:
        offsets = (np.arange(self.n_pins) - (self.n_pins - 1) / 2.0) * self.spacing
        return [(float(x), self.depth) for x in offsets]


PIN_ROWS: Dict[PinLayout, PinRow] = {
    PinLayout.HORIZONTAL_PINS_20MM: PinRow(20e-3, 9, 4e-3),
    PinLayout.HORIZONTAL_PINS_25MM: PinRow(25e-3, 11, 4e-3),
    PinLayout.HORIZONTAL_PINS_40MM: PinRow(40e-3, 9, 5e-3),
}


def element_impulse_response(
    center_freq: float = 7.5e6,
    fractional_bw: float = 0.70,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
) -> ElementResponse:
    """
    Gaussian-enveloped two-way element response of unit energy.

    Args:
        center_freq: Centre frequency in Hz
        fractional_bw: -6 dB fractional bandwidth, in (0, 2)
        sample_rate: Sampling rate in Hz

    Returns:
        ElementResponse centred in time on its middle sample

    Raises:
        ValueError: On an out-of-range bandwidth or undersampling
    """
    if not 0.0 < fractional_bw < 2.0:
        raise ValueError(f"Fractional bandwidth must lie in (0, 2), got {fractional_bw}")
    if sample_rate < 4 * center_freq:
        raise ValueError(
            f"Sample rate {sample_rate:g} Hz is below 4x the centre frequency {center_freq:g} Hz"
        )
    t_cut = signal.gausspulse("cutoff", fc=center_freq, bw=fractional_bw, bwr=-6, tpr=-80)
    half = int(math.ceil(t_cut * sample_rate))
    t = np.arange(-half, half + 1) / sample_rate
    impulse = signal.gausspulse(t, fc=center_freq, bw=fractional_bw, bwr=-6)
    impulse = impulse / np.sqrt(np.sum(impulse ** 2))
    return ElementResponse(impulse, center_freq, fractional_bw, sample_rate)


def pulse_echo_waveform(waveform: np.ndarray, response: Optional[ElementResponse]) -> np.ndarray:
    """Two-way echo shape of a transmit waveform."""
    waveform = np.asarray(waveform, dtype=float)
    if response is None:
        return waveform.copy()
    return np.convolve(waveform, response.impulse)


def attenuation_response(freqs: np.ndarray, path_length: float, alpha: float) -> np.ndarray:
    """Amplitude response 10^(-alpha f[MHz] L[cm] / 20), symmetric in f."""
    return 10.0 ** (-alpha * np.abs(freqs) / 1e6 * path_length / 20.0)


def attenuation_filter(
    x: np.ndarray,
    path_length: float,
    alpha: float,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
) -> np.ndarray:
    """
    Zero-phase frequency-domain attenuation along the last axis.

    Args:
        x: Real signal(s)
        path_length: Propagation path in cm
        alpha: Attenuation coefficient in dB/(MHz cm)
        sample_rate: Sampling rate in Hz

    Returns:
        Real array of the same shape

    Raises:
        ValueError: On a negative path length
    """
    if path_length < 0:
        raise ValueError(f"Path length must be non-negative, got {path_length}")
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(n, n)]
    padded = np.pad(x, pad)
    freqs = np.fft.rfftfreq(padded.shape[-1], 1.0 / sample_rate)
    spectrum = np.fft.rfft(padded, axis=-1) * attenuation_response(freqs, path_length, alpha)
    return np.fft.irfft(spectrum, n=padded.shape[-1], axis=-1)[..., n:2 * n]


def record_length(
    max_depth: float,
    c: float,
    sample_rate: float,
    echo_length: int,
    max_tx_delay: float = 0.0,
) -> int:
    """Samples needed to record echoes from `max_depth`."""
    return int(math.ceil((2.0 * max_depth / c + max_tx_delay) * sample_rate)) + echo_length


def _channel_trains(
    tau: np.ndarray,
    amp: np.ndarray,
    path: np.ndarray,
    n_samples: int,
    sample_rate: float,
    path_step: Optional[float],
) -> Tuple[np.ndarray, np.ndarray]:
    """Deposit contributions into per-path-node impulse trains."""
    u = (tau * sample_rate).ravel()
    k = np.floor(u).astype(np.int64)
    w = u - k
    amp = amp.ravel()
    keep = (k >= 0) & (k < n_samples)
    k, w, amp = k[keep], w[keep], amp[keep]
    width = n_samples + 1

    if path_step is None:
        flat = np.concatenate([k, k + 1])
        weights = np.concatenate([amp * (1.0 - w), amp * w])
        trains = np.bincount(flat, weights=weights, minlength=width)[None, :n_samples]
        return trains, np.zeros(1)

    b = path.ravel()[keep] / path_step
    b0 = np.floor(b).astype(np.int64)
    wb = b - b0
    nodes, inverse = np.unique(np.concatenate([b0, b0 + 1]), return_inverse=True)
    row0, row1 = inverse[: b0.size], inverse[b0.size:]
    flat = np.concatenate([row0 * width + k, row0 * width + k + 1,
                           row1 * width + k, row1 * width + k + 1])
    weights = np.concatenate([amp * (1 - wb) * (1 - w), amp * (1 - wb) * w,
                              amp * wb * (1 - w), amp * wb * w])
    trains = np.bincount(flat, weights=weights, minlength=nodes.size * width)
    trains = trains.reshape(nodes.size, width)[:, :n_samples]
    return trains, nodes * path_step


def simulate_rx(
    excitation_waveform: np.ndarray,
    tx_delays: DelayProfile,
    phantom: Phantom,
    geometry: ArrayGeometry,
    noise_power: float = 0.0,
    seed: int = 0,
    response: Optional[ElementResponse] = None,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    n_samples: Optional[int] = None,
    max_depth: float = DEFAULT_MAX_DEPTH,
    path_step: float = DEFAULT_PATH_STEP,
    progress: bool = True,
) -> RFFrame:
    """
    Synthesize the per-channel RF frame of one transmission event.

    Args:
        excitation_waveform: Transmit waveform sampled at `sample_rate`
        tx_delays: Firing delays (and active elements) of the event
        phantom: Scatterers and medium
        geometry: Array geometry
        noise_power: Variance of the additive white Gaussian noise
        seed: Seed of the noise generator
        response: Two-way element response (None for an ideal channel)
        sample_rate: Sampling rate in Hz
        n_samples: Record length; derived from `max_depth` when None
        max_depth: Deepest echo to record when `n_samples` is None
        path_step: Path-length node spacing for attenuation filtering
        progress: Show a progress bar over receive channels

    Returns:
        RFFrame with t0 = 0 at the start of the firing sequence

    Raises:
        ValueError: On an empty geometry or mismatched delay profile
    """
    n_el = geometry.n_elements
    if n_el == 0:
        raise ValueError("Cannot simulate an empty array")
    if tx_delays.delays.size != n_el:
        raise ValueError(f"Delay profile has {tx_delays.delays.size} entries for {n_el} elements")

    c = phantom.medium.sound_speed
    alpha = phantom.medium.attenuation
    echo = pulse_echo_waveform(excitation_waveform, response)
    if n_samples is None:
        n_samples = record_length(max_depth, c, sample_rate, echo.size, float(tx_delays.delays.max()))

    samples = np.zeros((n_el, n_samples))
    if len(phantom) and np.any(echo):
        active = tx_delays.active_mask
        ex = geometry.element_x
        # element-to-scatterer distances, shape (elements, scatterers)
        dist = np.hypot(phantom.x[None, :] - ex[:, None], phantom.z[None, :])
        d_tx = dist[active]
        delay_tx = tx_delays.delays[active][:, None]
        step = path_step if alpha > 0 else None
        nfft = sp_fft.next_fast_len(n_samples + echo.size - 1, real=True)
        echo_spec = np.fft.rfft(echo, nfft)
        freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)

        channels = range(n_el)
        if progress:
            channels = tqdm(channels, desc="Synthesizing channels", unit="ch", leave=False)
        for i in channels:
            d_rx = dist[i][None, :]
            path = d_tx + d_rx
            tau = delay_tx + path / c
            amp = phantom.reflectivity[None, :] / (d_tx * d_rx)
            trains, node_paths = _channel_trains(tau, amp, path, n_samples, sample_rate, step)
            spectra = np.fft.rfft(trains, nfft, axis=1)
            if step is None:
                total = spectra[0] * echo_spec
            else:
                gains = attenuation_response(freqs[None, :], node_paths[:, None] * 100.0, alpha)
                total = np.sum(spectra * gains, axis=0) * echo_spec
            samples[i] = np.fft.irfft(total, nfft)[:n_samples]

    if noise_power > 0:
        rng = np.random.default_rng(seed)
        samples += rng.normal(0.0, math.sqrt(noise_power), size=samples.shape)

    logger.debug("Simulated %d scatterers into %d x %d frame", len(phantom), n_el, n_samples)
    return RFFrame(samples=samples, sample_rate=sample_rate, t0=0.0)


def _phantom(points: Sequence[Tuple[float, float]], reflectivity: float, medium: Medium,
             label: str) -> Phantom:
    if points:
        xs, zs = zip(*points)
    else:
        xs, zs = (), ()
    x = np.array(xs, dtype=float)
    return Phantom(
        x=x,
        z=np.array(zs, dtype=float),
        reflectivity=np.full(x.size, float(reflectivity)),
        medium=medium,
        label=label,
    )


def _vertical_column() -> List[Tuple[float, float]]:
    return [(0.0, d * 1e-3) for d in range(5, 65, 5)]


def _dedupe(points: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    seen = {}
    for x, z in points:
        seen.setdefault((round(x * 1e6), round(z * 1e6)), (x, z))
    return sorted(seen.values(), key=lambda p: (p[1], p[0]))


def make_pin_phantom(
    layout,
    medium: Optional[Medium] = None,
    reflectivity: float = 1.0,
) -> Phantom:
    """
    Pin (nylon line) targets of the commercial phantom.

    Args:
        layout: PinLayout or its string value
        medium: Medium of the phantom (default tissue-mimicking 1450 m/s, 0.5 dB/MHz/cm)
        reflectivity: Common reflectivity of every pin

    Returns:
        Phantom of equally reflective pins

    Raises:
        ValueError: On an unknown preset
    """
    try:
        layout = PinLayout(layout)
    except ValueError:
        valid = ", ".join(p.value for p in PinLayout)
        raise ValueError(f"Unknown pin preset '{layout}'; expected one of: {valid}") from None
    medium = medium or Medium()

    if layout is PinLayout.VERTICAL_PINS:
        points = _vertical_column()
    elif layout is PinLayout.FULL_MODEL550:
        points = _vertical_column()
        for row in PIN_ROWS.values():
            points.extend(row.positions())
        points = _dedupe(points)
    else:
        points = PIN_ROWS[layout].positions()
    return _phantom(points, reflectivity, medium, layout.value)


def make_row_phantom(
    rows: Sequence[PinRow],
    medium: Optional[Medium] = None,
    reflectivity: float = 1.0,
) -> Phantom:
    """Phantom of arbitrary pin rows (reduced layouts for desk-scale sweeps)."""
    points: List[Tuple[float, float]] = []
    for row in rows:
        points.extend(row.positions())
    return _phantom(_dedupe(points), reflectivity, medium or Medium(), "pin_rows")


def make_speckle_phantom(
    region: Rect,
    scatterers_per_mm2: float,
    cysts: Sequence[Cyst] = (),
    seed: int = 0,
    sigma: float = 1.0,
    medium: Optional[Medium] = None,
) -> Phantom:
    """
    Uniform speckle field with zero-mean Gaussian reflectivities.

    Args:
        region: Rectangle filled with scatterers
        scatterers_per_mm2: Scatterer density
        cysts: Anechoic discs emptied of scatterers
        seed: Generator seed
        sigma: Reflectivity standard deviation
        medium: Medium of the phantom

    Returns:
        Phantom with int(round(density * area)) scatterers minus those in cysts
    """
    if scatterers_per_mm2 <= 0:
        raise ValueError(f"Scatterer density must be positive, got {scatterers_per_mm2}")
    rng = np.random.default_rng(seed)
    count = int(round(scatterers_per_mm2 * region.area * 1e6))
    x = rng.uniform(region.x_min, region.x_max, count)
    z = rng.uniform(region.z_min, region.z_max, count)
    refl = rng.normal(0.0, sigma, count)

    keep = z > 0
    for cyst in cysts:
        keep &= np.hypot(x - cyst.x, z - cyst.z) > cyst.diameter / 2.0
    logger.debug("Speckle phantom: %d of %d scatterers outside cysts", int(keep.sum()), count)
    return Phantom(x=x[keep], z=z[keep], reflectivity=refl[keep],
                   medium=medium or Medium(), label="speckle")


def combine_phantoms(first: Phantom, second: Phantom) -> Phantom:
    """Union of two phantoms sharing the first one's medium."""
    return Phantom(
        x=np.concatenate([first.x, second.x]),
        z=np.concatenate([first.z, second.z]),
        reflectivity=np.concatenate([first.reflectivity, second.reflectivity]),
        medium=first.medium,
        label="+".join(filter(None, [first.label, second.label])),
    )


def planar_reflector_echo(
    excitation_waveform: np.ndarray,
    response: Optional[ElementResponse],
    depth: float,
    c: float,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
) -> RFFrame:
    """
    Single-element pulse echo off a perfect plane reflector in a lossless medium.

    The plane is modelled by its image source at twice the depth, so the echo
    is the two-way shape delayed by 2*depth/c with 1/(2*depth) spreading.
    """
    echo = pulse_echo_waveform(excitation_waveform, response) / (2.0 * depth)
    u = 2.0 * depth / c * sample_rate
    k = int(math.floor(u))
    w = u - k
    samples = np.zeros(k + echo.size + 2)
    samples[k:k + echo.size] += (1.0 - w) * echo
    samples[k + 1:k + 1 + echo.size] += w * echo
    return RFFrame(samples=samples[None, :], sample_rate=sample_rate, t0=0.0)
