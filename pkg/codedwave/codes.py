#!/usr/bin/env python3
"""
Complementary Golay sequence generation and BPSK chip modulation.

This module builds complementary Golay sequence (CGS) pairs from the
length-2 base pair by the doubling rule, embeds a literature length-10 pair,
and modulates a pair into sampled transmit waveforms with one sinusoid
template per chip.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple
import logging

import numpy as np

logger = logging.getLogger(__name__)

SUPPORTED_LENGTHS: Tuple[int, ...] = (2, 4, 8, 10, 16)

# Golay's length-10 pair; checked against the oracle on first use.
_GOLAY_10_A = (1, 1, -1, 1, -1, 1, -1, -1, 1, 1)
_GOLAY_10_B = (1, 1, -1, 1, 1, 1, 1, 1, -1, -1)

_BASE_A = (1, 1)
_BASE_B = (1, -1)


class NoKnownPairError(ValueError):
    """Raised when no complementary pair is available for a length."""


@dataclass(frozen=True)
class GolayPair:
    """A complementary pair of bipolar sequences, CGS(A) and CGS(B)."""

    seq_a: np.ndarray
    seq_b: np.ndarray

    @property
    def length_bits(self) -> int:
        return int(self.seq_a.size)


@dataclass(frozen=True)
class CodedExcitation:
    """Sampled transmit waveforms for a coded (or single-chip) excitation.

    A 1-chip excitation is the uncoded 2-cycle reference pulse; it has no
    pair and a single transmission.
    """

    pair: Optional[GolayPair]
    carrier_freq: float
    cycles_per_chip: int
    sample_rate: float
    waveform_a: np.ndarray
    waveform_b: Optional[np.ndarray] = None

    @property
    def chips(self) -> int:
        return 1 if self.pair is None else self.pair.length_bits

    @property
    def chip_samples(self) -> int:
        return chip_sample_count(self.carrier_freq, self.cycles_per_chip, self.sample_rate)

    @property
    def transmissions(self) -> Dict[str, np.ndarray]:
        """Waveforms keyed by sequence label, in firing order."""
        if self.waveform_b is None:
            return {"A": self.waveform_a}
        return {"A": self.waveform_a, "B": self.waveform_b}


def complementary_autocorrelation(pair: GolayPair) -> np.ndarray:
    """
    Sum the aperiodic autocorrelations of both sequences of a pair.

    Args:
        pair: Any pair of equal-length sequences (complementary or not)

    Returns:
        Integer vector of length 2N-1 indexed by lag -(N-1)..(N-1)

    Raises:
        ValueError: If the two sequences differ in length
    """
    a = np.asarray(pair.seq_a, dtype=np.int64)
    b = np.asarray(pair.seq_b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"Sequence lengths differ: {a.size} vs {b.size}")
    return np.correlate(a, a, mode="full") + np.correlate(b, b, mode="full")


def is_complementary(pair: GolayPair) -> bool:
    """Check the pair against the 2N-delta oracle at every lag."""
    acf = complementary_autocorrelation(pair)
    n = pair.length_bits
    expected = np.zeros_like(acf)
    expected[n - 1] = 2 * n
    return bool(np.array_equal(acf, expected))


def _make_pair(seq_a, seq_b) -> GolayPair:
    a = np.array(seq_a, dtype=np.int8)
    b = np.array(seq_b, dtype=np.int8)
    a.setflags(write=False)
    b.setflags(write=False)
    return GolayPair(seq_a=a, seq_b=b)


def double_pair(pair: GolayPair) -> GolayPair:
    """Apply the doubling rule A' = A||B, B' = A||-B."""
    return _make_pair(
        np.concatenate([pair.seq_a, pair.seq_b]),
        np.concatenate([pair.seq_a, -pair.seq_b]),
    )


def golay_pair(length_bits: int) -> GolayPair:
    """
    Build a complementary Golay pair of the requested length.

    Args:
        length_bits: One of 2, 4, 8, 10, 16

    Returns:
        GolayPair verified against the complementary oracle

    Raises:
        NoKnownPairError: If no pair is known for the length
        RuntimeError: If an embedded pair fails verification
    """
    if length_bits not in SUPPORTED_LENGTHS:
        raise NoKnownPairError(
            f"No known pair for length {length_bits}; supported lengths are {SUPPORTED_LENGTHS}"
        )

    if length_bits == 10:
        pair = _make_pair(_GOLAY_10_A, _GOLAY_10_B)
    else:
        pair = _make_pair(_BASE_A, _BASE_B)
        while pair.length_bits < length_bits:
            pair = double_pair(pair)

    if not is_complementary(pair):
        raise RuntimeError(f"Pair of length {length_bits} fails the complementary check")
    return pair


def chip_sample_count(carrier_freq: float, cycles_per_chip: int, sample_rate: float) -> int:
    """Samples per chip, rounded half up."""
    return int(np.floor(cycles_per_chip * sample_rate / carrier_freq + 0.5))


def _chip_template(carrier_freq: float, cycles_per_chip: int, sample_rate: float) -> np.ndarray:
    if carrier_freq <= 0 or sample_rate <= 0:
        raise ValueError(
            f"Frequencies must be positive (carrier={carrier_freq}, sample_rate={sample_rate})"
        )
    if cycles_per_chip <= 0:
        raise ValueError(f"cycles_per_chip must be positive, got {cycles_per_chip}")
    if sample_rate < 4 * carrier_freq:
        raise ValueError(
            f"Sample rate {sample_rate:g} Hz is below 4x the carrier {carrier_freq:g} Hz"
        )
    n = np.arange(chip_sample_count(carrier_freq, cycles_per_chip, sample_rate))
    return np.sin(2.0 * np.pi * carrier_freq * n / sample_rate)


def _modulate(symbols: np.ndarray, template: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(symbols, dtype=float), template)


def bpsk_modulate(
    pair: GolayPair,
    carrier_freq: float = 7.5e6,
    cycles_per_chip: int = 2,
    sample_rate: float = 80e6,
) -> CodedExcitation:
    """
    Modulate both sequences of a pair with binary phase shift keying.

    Every chip is the same sinusoid template of round(cycles*fs/f0) samples
    multiplied by the chip symbol, so chip k occupies samples
    [k*L, (k+1)*L).

    Args:
        pair: Golay pair to transmit
        carrier_freq: Carrier frequency in Hz
        cycles_per_chip: Sinusoid cycles per chip
        sample_rate: Sampling rate in Hz

    Returns:
        CodedExcitation with one waveform per sequence

    Raises:
        ValueError: On non-positive frequencies or undersampling
    """
    template = _chip_template(carrier_freq, cycles_per_chip, sample_rate)
    return CodedExcitation(
        pair=pair,
        carrier_freq=carrier_freq,
        cycles_per_chip=cycles_per_chip,
        sample_rate=sample_rate,
        waveform_a=_modulate(pair.seq_a, template),
        waveform_b=_modulate(pair.seq_b, template),
    )


def pulse_excitation(
    carrier_freq: float = 7.5e6,
    cycles_per_chip: int = 2,
    sample_rate: float = 80e6,
) -> CodedExcitation:
    """The uncoded reference pulse: a single +1 chip."""
    template = _chip_template(carrier_freq, cycles_per_chip, sample_rate)
    return CodedExcitation(
        pair=None,
        carrier_freq=carrier_freq,
        cycles_per_chip=cycles_per_chip,
        sample_rate=sample_rate,
        waveform_a=template,
    )


def make_excitation(
    code_bits: int,
    carrier_freq: float = 7.5e6,
    cycles_per_chip: int = 2,
    sample_rate: float = 80e6,
) -> CodedExcitation:
    """Build the excitation for a code length, 1 meaning the uncoded pulse."""
    if code_bits == 1:
        return pulse_excitation(carrier_freq, cycles_per_chip, sample_rate)
    logger.debug("Modulating %d-bit Golay pair", code_bits)
    return bpsk_modulate(golay_pair(code_bits), carrier_freq, cycles_per_chip, sample_rate)
