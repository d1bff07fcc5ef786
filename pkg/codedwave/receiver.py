#!/usr/bin/env python3
"""
Correlation receiver for coded transmissions.

Reference extraction (pulse echo of the mid element off a plane reflector in
water), depth-indexed attenuation compensation of the references, energy
normalization, per-channel sliding correlation and Golay A/B combination.
"""

from dataclasses import dataclass, replace
from typing import Dict, NamedTuple, Optional
import logging
import math

import numpy as np
from scipy import signal

from codedwave.acoustics import (
    DEFAULT_SAMPLE_RATE,
    ElementResponse,
    Medium,
    RFFrame,
    attenuation_filter,
    planar_reflector_echo,
)
from codedwave.codes import CodedExcitation
from codedwave.txprofiles import ArrayGeometry

logger = logging.getLogger(__name__)

REFERENCE_DEPTH = 40e-3
DEPTH_STEP = 5e-3
N_REFERENCES = 12
SUPPORT_THRESHOLD = 0.01


class ReferenceWaveform(NamedTuple):
    """Cropped two-way echo used as a correlation reference.

    `lag` is the number of samples from the echo origin (arrival time of the
    scatterer) to the first reference sample; `peak_offset` locates the echo
    envelope peak on the same scale.
    """
    waveform: np.ndarray
    lag: float
    peak_offset: float


@dataclass(frozen=True)
class ReferenceBank:
    """Depth-indexed references for one code sequence."""

    refs: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    depth_step: float = DEPTH_STEP
    code_id: str = "A"
    chips: int = 1
    lag: float = 0.0
    peak_offset: float = 0.0
    uncompensated: Optional[np.ndarray] = None

    @property
    def n_refs(self) -> int:
        return int(self.refs.shape[0])

    @property
    def length(self) -> int:
        return int(self.refs.shape[1])

    def ref(self, r: int) -> np.ndarray:
        """Reference of 1-based depth bin r."""
        return self.refs[r - 1]


@dataclass(frozen=True)
class MFOutput:
    """Correlator output on the time base of its input frame."""

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0
    lag: float = 0.0

    @property
    def origin(self) -> float:
        """Echo arrival time addressed by sample 0."""
        return self.t0 - self.lag / self.sample_rate

    @property
    def n_elements(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[1])

    def analytic(self) -> "MFOutput":
        """Analytic signal of every channel."""
        if np.iscomplexobj(self.samples):
            return self
        return replace(self, samples=signal.hilbert(self.samples, axis=1))


def _support(echo: np.ndarray, threshold: float):
    env = np.abs(signal.hilbert(echo))
    peak = int(np.argmax(env))
    level = threshold * env[peak]
    start = peak
    while start > 0 and env[start - 1] > level:
        start -= 1
    stop = peak + 1
    while stop < env.size and env[stop] > level:
        stop += 1
    return start, stop, peak


def extract_reference(
    excitation: CodedExcitation,
    geometry: ArrayGeometry,
    sample_rate: Optional[float] = None,
    response: Optional[ElementResponse] = None,
    medium: Optional[Medium] = None,
    depth: float = REFERENCE_DEPTH,
    threshold: float = SUPPORT_THRESHOLD,
) -> Dict[str, ReferenceWaveform]:
    """
    Extract the water-tank reference of every transmitted sequence.

    The mid element fires against a perfect plane reflector at `depth` in a
    lossless copy of the medium; the received echo is cropped to the
    contiguous span whose envelope exceeds `threshold` of its peak.

    Args:
        excitation: Coded (or single-chip) excitation
        geometry: Array geometry (the mid element fires)
        sample_rate: Sampling rate; defaults to the excitation's
        response: Two-way element response included in the echo
        medium: Medium whose sound speed is used (attenuation ignored)
        depth: Reflector depth in metres
        threshold: Relative envelope level bounding the echo support

    Returns:
        Dict of ReferenceWaveform keyed by sequence label

    Raises:
        ValueError: If a transmit waveform is all zero
    """
    fs = sample_rate or excitation.sample_rate
    c = (medium or Medium()).sound_speed
    origin = 2.0 * depth / c * fs
    logger.debug("Extracting references from element %d at %.1f mm",
                 geometry.center_index, depth * 1e3)

    references = {}
    for label, waveform in excitation.transmissions.items():
        if not np.any(waveform):
            raise ValueError(f"Excitation sequence {label} is all zero; no echo to extract")
        echo = planar_reflector_echo(waveform, response, depth, c, fs).samples[0]
        start, stop, peak = _support(echo, threshold)
        references[label] = ReferenceWaveform(
            waveform=echo[start:stop].copy(),
            lag=start - origin,
            peak_offset=peak - origin,
        )
    return references


def _scaled(waveform: np.ndarray, chips: int) -> np.ndarray:
    energy = float(np.sum(waveform ** 2))
    if energy <= 0:
        raise ValueError("Reference has zero energy")
    return waveform * math.sqrt(chips / energy)


def build_reference_bank(
    base_ref: ReferenceWaveform,
    medium: Medium,
    chips: int = 1,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    code_id: str = "A",
    n_refs: int = N_REFERENCES,
    depth_step: float = DEPTH_STEP,
) -> ReferenceBank:
    """
    Attenuation-compensate a water-tank reference at every depth bin.

    refs[r] is the base shape attenuated over the round-trip path
    2 * r * depth_step, normalized to unit energy and then scaled so its
    energy equals the chip count.

    Args:
        base_ref: Water-tank reference of one sequence
        medium: Medium whose attenuation is compensated
        chips: Code length in chips
        sample_rate: Sampling rate in Hz
        code_id: Sequence label
        n_refs: Number of depth bins
        depth_step: Depth bin width in metres

    Returns:
        ReferenceBank of n_refs references

    Raises:
        ValueError: If the base reference has zero energy
    """
    base = np.asarray(base_ref.waveform, dtype=float)
    uncompensated = _scaled(base, chips)
    refs = np.empty((n_refs, base.size))
    for r in range(1, n_refs + 1):
        path_cm = 2.0 * r * depth_step * 100.0
        refs[r - 1] = _scaled(attenuation_filter(base, path_cm, medium.attenuation, sample_rate), chips)
    return ReferenceBank(
        refs=refs,
        sample_rate=sample_rate,
        depth_step=depth_step,
        code_id=code_id,
        chips=chips,
        lag=base_ref.lag,
        peak_offset=base_ref.peak_offset,
        uncompensated=uncompensated,
    )


def uncompensated_bank(bank: ReferenceBank) -> ReferenceBank:
    """The same bank with the water-tank shape used at every depth."""
    if bank.uncompensated is None:
        raise ValueError("Bank carries no uncompensated reference")
    refs = np.repeat(bank.uncompensated[None, :], bank.n_refs, axis=0)
    return replace(bank, refs=refs)


def build_banks(
    excitation: CodedExcitation,
    geometry: ArrayGeometry,
    medium: Medium,
    response: Optional[ElementResponse] = None,
    compensate: bool = True,
) -> Dict[str, ReferenceBank]:
    """Extract references and build one bank per transmitted sequence."""
    banks = {}
    refs = extract_reference(excitation, geometry, excitation.sample_rate, response, medium)
    for label, ref in refs.items():
        bank = build_reference_bank(ref, medium, excitation.chips, excitation.sample_rate, label)
        banks[label] = bank if compensate else uncompensated_bank(bank)
    return banks


def depth_bins(n_samples: int, t0: float, sample_rate: float, c: float,
               depth_step: float, n_refs: int) -> np.ndarray:
    """1-based reference index for every output sample."""
    depth = c * (t0 + np.arange(n_samples) / sample_rate) / 2.0
    return np.clip(np.floor(depth / depth_step).astype(np.int64) + 1, 1, n_refs)


def matched_filter(frame: RFFrame, bank: ReferenceBank, c: float = 1450.0) -> MFOutput:
    """
    Depth-switched sliding correlation of every channel with the bank.

    Output sample m is sum_k y(m + k) s_r(k) with r chosen from the depth
    of sample m; samples beyond the frame are zero.

    Args:
        frame: Received RF frame
        bank: Reference bank sampled at the frame's rate
        c: Sound speed used for the depth of each sample

    Returns:
        MFOutput with the frame's length and time base

    Raises:
        ValueError: On a sample-rate or dimension mismatch
    """
    y = np.asarray(frame.samples)
    if y.ndim != 2:
        raise ValueError(f"Frame samples must be 2-D, got shape {y.shape}")
    if bank.refs.ndim != 2 or bank.length == 0:
        raise ValueError(f"Bank references must be a non-empty 2-D array, got shape {bank.refs.shape}")
    if not math.isclose(frame.sample_rate, bank.sample_rate, rel_tol=1e-12):
        raise ValueError(
            f"Frame sampled at {frame.sample_rate:g} Hz but bank at {bank.sample_rate:g} Hz"
        )

    n = y.shape[1]
    k = bank.length
    padded = np.pad(y, ((0, 0), (0, k - 1)))
    bins = depth_bins(n, frame.t0, frame.sample_rate, c, bank.depth_step, bank.n_refs)
    out = np.zeros(y.shape, dtype=np.result_type(y.dtype, bank.refs.dtype))

    edges = np.flatnonzero(np.diff(bins)) + 1
    starts = np.concatenate([[0], edges])
    stops = np.concatenate([edges, [n]])
    for lo, hi in zip(starts, stops):
        ref = bank.ref(int(bins[lo]))
        out[:, lo:hi] = signal.correlate(padded[:, lo:hi + k - 1], ref[None, :], mode="valid")

    return MFOutput(samples=out, sample_rate=frame.sample_rate, t0=frame.t0, lag=bank.lag)


def golay_combine(mf_a: MFOutput, mf_b: MFOutput) -> MFOutput:
    """Add the correlator outputs of the A and B transmissions."""
    if mf_a.samples.shape != mf_b.samples.shape:
        raise ValueError(f"Shape mismatch: {mf_a.samples.shape} vs {mf_b.samples.shape}")
    if mf_a.sample_rate != mf_b.sample_rate or mf_a.t0 != mf_b.t0:
        raise ValueError("Correlator outputs are on different time bases")
    return replace(mf_a, samples=mf_a.samples + mf_b.samples)


def correlate_transmissions(
    frames: Dict[str, RFFrame],
    banks: Dict[str, ReferenceBank],
    c: float = 1450.0,
) -> MFOutput:
    """Matched-filter each sequence's frame and combine the outputs."""
    if not frames:
        raise ValueError("No transmissions to correlate")
    missing = set(frames) ^ set(banks)
    if missing:
        raise ValueError(f"Frames and banks disagree on sequences: {sorted(missing)}")
    combined: Optional[MFOutput] = None
    for label in sorted(frames):
        mf = matched_filter(frames[label], banks[label], c)
        combined = mf if combined is None else golay_combine(combined, mf)
    return combined  # type: ignore[return-value]
