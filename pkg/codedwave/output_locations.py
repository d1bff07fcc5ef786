#!/usr/bin/env python3
"""
Run directory layout.

A run writes its artifacts under one output directory:

    <out>/frames/       RF frames, one container per transmission
    <out>/mf/           correlator outputs, time base at the echo origin
    <out>/noise/        noise-only frames
    <out>/references/   reference banks, one container per sequence
    <out>/images/       beamformed envelopes and PGM renderings
    <out>/metrics/      CSV curves and profiles
    <out>/manifest.txt  content hashes of everything above
"""

from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Union
import logging
import re

logger = logging.getLogger(__name__)

FRAME_SUFFIX = ".rf"
_FRAME_PATTERN = re.compile(r"^tx(\d+)_([A-Z])\.rf$")


class ArtifactKind(Enum):
    """Artifact directories of a run."""
    FRAMES = "frames"
    MF = "mf"
    NOISE = "noise"
    REFERENCES = "references"
    IMAGES = "images"
    METRICS = "metrics"


class OutputPaths(NamedTuple):
    """Directories of one run."""
    root: Path
    frames_dir: Path
    mf_dir: Path
    noise_dir: Path
    references_dir: Path
    images_dir: Path
    metrics_dir: Path


def get_output_paths(root: Union[str, Path]) -> OutputPaths:
    """
    Lay out the artifact directories of a run.

    Args:
        root: Output directory of the run

    Returns:
        OutputPaths: Named tuple of the run's directories
    """
    root = Path(root)
    return OutputPaths(
        root=root,
        frames_dir=root / ArtifactKind.FRAMES.value,
        mf_dir=root / ArtifactKind.MF.value,
        noise_dir=root / ArtifactKind.NOISE.value,
        references_dir=root / ArtifactKind.REFERENCES.value,
        images_dir=root / ArtifactKind.IMAGES.value,
        metrics_dir=root / ArtifactKind.METRICS.value,
    )


def ensure_output_paths(paths: OutputPaths) -> OutputPaths:
    """
    Create every directory of the layout.

    Raises:
        OSError: With the directory that could not be created
    """
    for directory in paths:
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise type(exc)(f"Cannot create output directory {directory}: {exc.strerror or exc}") from exc
    return paths


def validate_paths(paths: OutputPaths) -> Dict[str, bool]:
    """
    Check which directories of the layout exist.

    Args:
        paths: OutputPaths to validate

    Returns:
        Dict[str, bool]: Directory name to existence
    """
    return {name: path.exists() and path.is_dir() for name, path in paths._asdict().items()}


def frame_name(index: int, label: str = "A") -> str:
    """File name of transmission `index`, sequence `label`."""
    return f"tx{index:03d}_{label}{FRAME_SUFFIX}"


def find_frames(directory: Union[str, Path], label: Optional[str] = None) -> List[Path]:
    """
    Frame files of a directory, ordered by transmission index then sequence.

    Args:
        directory: Directory to search
        label: Only return frames of this sequence

    Returns:
        List[Path]: Matching frame files; empty if the directory is missing
    """
    directory = Path(directory)
    if not directory.is_dir():
        return []
    found = []
    for path in directory.iterdir():
        match = _FRAME_PATTERN.match(path.name)
        if match and (label is None or match.group(2) == label):
            found.append((int(match.group(1)), match.group(2), path))
    return [path for _, _, path in sorted(found)]


def group_frames(frames: List[Path]) -> List[Dict[str, Path]]:
    """Group frame files into transmissions keyed by sequence label."""
    groups: Dict[int, Dict[str, Path]] = {}
    for path in frames:
        match = _FRAME_PATTERN.match(path.name)
        if match is None:
            raise ValueError(f"Not a frame file name: {path.name}")
        groups.setdefault(int(match.group(1)), {})[match.group(2)] = path
    return [groups[k] for k in sorted(groups)]


def get_run_info(root: Union[str, Path]) -> Dict[str, str]:
    """
    Summarize a run directory.

    Args:
        root: Output directory of the run

    Returns:
        Dict[str, str]: Run information
    """
    root = Path(root)
    if not root.exists():
        return {"error": "Run directory does not exist"}
    paths = get_output_paths(root)
    realizations = [paths.noise_dir] + (sorted(p for p in paths.noise_dir.iterdir() if p.is_dir())
                                        if paths.noise_dir.is_dir() else [])
    return {
        "path": str(root),
        "name": root.name,
        "frames": str(len(find_frames(paths.frames_dir))),
        "noise_frames": str(sum(len(find_frames(d)) for d in realizations)),
        "images": str(len(list(paths.images_dir.glob("*.rf")))) if paths.images_dir.is_dir() else "0",
        "manifest": str((root / "manifest.txt").exists()),
    }
