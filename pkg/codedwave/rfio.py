#!/usr/bin/env python3
"""
On-disk formats: the RF frame container, beamformed images, PGM rasters
and the content-hash manifest.

RF container layout (little-endian):
    8 bytes  magic b"CDWRF1\\0\\0"
    u32      channel count
    u32      samples per channel
    f64      sample rate (Hz)
    f64      t0 (s)
    float32  samples, channel-major
"""

from pathlib import Path
from typing import Iterable, List, Tuple, Union
import hashlib
import logging
import struct

import numpy as np
import pandas as pd

from codedwave.acoustics import RFFrame
from codedwave.beamform import PolarGrid
from codedwave.receiver import ReferenceBank

logger = logging.getLogger(__name__)

MAGIC = b"CDWRF1\0\0"
HEADER = struct.Struct("<8sIIdd")
MANIFEST_NAME = "manifest.txt"

PathLike = Union[str, Path]


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


def _write_bytes(path: Path, payload: bytes) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise type(exc)(f"Cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise type(exc)(f"Cannot read {path}: {exc.strerror or exc}") from exc


def encode_rf(samples: np.ndarray, sample_rate: float, t0: float) -> bytes:
    samples = np.atleast_2d(np.asarray(samples))
    if np.iscomplexobj(samples):
        raise ValueError("The RF container stores real samples only")
    n_ch, n_s = samples.shape
    header = HEADER.pack(MAGIC, n_ch, n_s, float(sample_rate), float(t0))
    return header + np.ascontiguousarray(samples, dtype="<f4").tobytes()


def decode_rf(payload: bytes, source: str = "<bytes>") -> RFFrame:
    """
    Parse an RF container.

    Raises:
        FormatError: On a bad magic or a truncated payload
    """
    if len(payload) < HEADER.size:
        raise FormatError(f"{source}: {len(payload)} bytes is shorter than the {HEADER.size}-byte header")
    magic, n_ch, n_s, fs, t0 = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    expected = HEADER.size + 4 * n_ch * n_s
    if len(payload) != expected:
        raise FormatError(f"{source}: expected {expected} bytes for {n_ch}x{n_s} samples, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4", offset=HEADER.size).reshape(n_ch, n_s)
    return RFFrame(samples=data.astype(np.float64), sample_rate=fs, t0=t0)


def write_rf(frame: RFFrame, path: PathLike) -> Path:
    return _write_bytes(Path(path), encode_rf(frame.samples, frame.sample_rate, frame.t0))


def read_rf(path: PathLike) -> RFFrame:
    path = Path(path)
    return decode_rf(_read_bytes(path), str(path))


def write_bank(bank: ReferenceBank, path: PathLike) -> Path:
    """One channel per depth bin; t0 carries the reference lag in seconds."""
    return _write_bytes(Path(path), encode_rf(bank.refs, bank.sample_rate, bank.lag / bank.sample_rate))


def read_bank(path: PathLike, depth_step: float = 5e-3, code_id: str = "A",
              chips: int = 1) -> ReferenceBank:
    frame = read_rf(path)
    return ReferenceBank(
        refs=frame.samples,
        sample_rate=frame.sample_rate,
        depth_step=depth_step,
        code_id=code_id,
        chips=chips,
        lag=frame.t0 * frame.sample_rate,
    )


def _angles_path(path: Path) -> Path:
    return path.with_name(path.stem + ".angles.csv")


def write_image(envelope: np.ndarray, grid: PolarGrid, path: PathLike) -> Tuple[Path, Path]:
    """
    Store a polar envelope: rows are scan lines, the sample-rate field holds
    range samples per metre and t0 the first range; angles go to a sidecar CSV.
    """
    path = Path(path)
    envelope = np.asarray(envelope)
    if envelope.shape != grid.shape:
        raise ValueError(f"Envelope of shape {envelope.shape} does not match grid {grid.shape}")
    step = grid.range_step or 1.0
    _write_bytes(path, encode_rf(envelope, 1.0 / step, float(grid.ranges[0])))
    sidecar = _angles_path(path)
    try:
        pd.DataFrame({"angle_deg": grid.angles}).to_csv(
            sidecar, index=False, float_format="%.9g", lineterminator="\n")
    except OSError as exc:
        raise type(exc)(f"Cannot write {sidecar}: {exc.strerror or exc}") from exc
    return path, sidecar


def read_image(path: PathLike) -> Tuple[np.ndarray, PolarGrid]:
    """
    Load an envelope stored by write_image.

    Raises:
        FormatError: If the container and the angle sidecar disagree
    """
    path = Path(path)
    frame = read_rf(path)
    sidecar = _angles_path(path)
    try:
        angles = pd.read_csv(sidecar)["angle_deg"].to_numpy(dtype=float)
    except OSError as exc:
        raise type(exc)(f"Cannot read {sidecar}: {exc.strerror or exc}") from exc
    if angles.size != frame.n_elements:
        raise FormatError(f"{sidecar}: {angles.size} angles for {frame.n_elements} scan lines")
    ranges = frame.t0 + np.arange(frame.n_samples) / frame.sample_rate
    return frame.samples, PolarGrid(angles=angles, ranges=ranges)


def write_pgm(gray: np.ndarray, path: PathLike) -> Path:
    """Binary 8-bit PGM (P5)."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValueError(f"PGM needs a 2-D uint8 raster, got {gray.dtype} {gray.shape}")
    height, width = gray.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return _write_bytes(Path(path), header + gray.tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    path = Path(path)
    payload = _read_bytes(path)
    parts = payload.split(maxsplit=4)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    data = payload[len(payload) - width * height:]
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    digest.update(_read_bytes(Path(path)))
    return digest.hexdigest()


def write_manifest(root: PathLike, paths: Iterable[PathLike]) -> Path:
    """`<sha256>  <relative posix path>` per artifact, sorted by path."""
    root = Path(root).resolve()
    entries: List[Tuple[str, str]] = []
    for item in paths:
        item = Path(item).resolve()
        entries.append((item.relative_to(root).as_posix(), sha256_file(item)))
    entries.sort()
    text = "".join(f"{digest}  {rel}\n" for rel, digest in entries)
    logger.info("Manifest lists %d artifacts", len(entries))
    return _write_bytes(root / MANIFEST_NAME, text.encode("utf-8"))


def read_manifest(path: PathLike) -> List[Tuple[str, str]]:
    """(digest, relative path) pairs."""
    lines = _read_bytes(Path(path)).decode("utf-8").splitlines()
    pairs = []
    for line in lines:
        digest, _, rel = line.partition("  ")
        if not rel:
            raise FormatError(f"{path}: malformed manifest line '{line}'")
        pairs.append((digest, rel))
    return pairs
