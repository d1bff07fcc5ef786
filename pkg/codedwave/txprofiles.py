#!/usr/bin/env python3
"""
Transmit delay profiles and sector/frame-rate bookkeeping.

Delay profiles cover the three transmission types of the imaging schemes:
diverging waves from a virtual source behind the array, focused and steered
beams for conventional sector scanning, and single-element firing for
synthetic transmit aperture. All profiles are normalized so the earliest
firing element has delay 0.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional
import logging
import math

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_SOUND_SPEED = 1450.0
REFERENCE_SOUND_SPEED = 1500.0
CENTER_FREQUENCY = 7.5e6
# Wavelength used to express apertures and virtual source distances in λ.
REFERENCE_WAVELENGTH = REFERENCE_SOUND_SPEED / CENTER_FREQUENCY

CSF_FOCUS_RANGE = 40e-3
CSF_SECTOR_HALF_ANGLE = 45.0
CSF_BEAM_COUNT = 181


class TxKind(Enum):
    """Transmission types."""
    DIVERGING = "diverging"
    FOCUSED = "focused"
    SINGLE_ELEMENT = "single_element"


@dataclass(frozen=True)
class ArrayGeometry:
    """Linear phased array centred on x = 0 along the lateral axis."""

    n_elements: int = 128
    pitch: float = 0.1e-3

    def __post_init__(self) -> None:
        if self.n_elements <= 0:
            raise ValueError(f"Array needs at least one element, got {self.n_elements}")
        if self.pitch <= 0:
            raise ValueError(f"Pitch must be positive, got {self.pitch}")

    @property
    def element_x(self) -> np.ndarray:
        idx = np.arange(self.n_elements, dtype=float)
        return (idx - (self.n_elements - 1) / 2.0) * self.pitch

    @property
    def aperture(self) -> float:
        return self.n_elements * self.pitch

    @property
    def center_index(self) -> int:
        """The mid element used for reference extraction (64th of 128)."""
        return self.n_elements // 2 - 1 if self.n_elements > 1 else 0


@dataclass(frozen=True)
class DelayProfile:
    """Per-element firing delays in seconds; inactive elements do not fire."""

    delays: np.ndarray
    kind: TxKind
    params: Dict[str, Any] = field(default_factory=dict)
    active: Optional[np.ndarray] = None

    @property
    def active_mask(self) -> np.ndarray:
        if self.active is None:
            return np.ones(self.delays.shape, dtype=bool)
        return self.active


class ScanBeam(NamedTuple):
    """One entry of a focused-beam scan plan."""
    steer_angle: float
    focus_range: float


def _normalize(delays: np.ndarray) -> np.ndarray:
    delays = delays - delays.min()
    delays[delays < 0] = 0.0
    return delays


def dw_delays(r_v: float, geometry: ArrayGeometry, c: float = DEFAULT_SOUND_SPEED) -> DelayProfile:
    """
    Delay profile of a diverging wave from a virtual source at (0, -r_v).

    Args:
        r_v: Virtual source distance behind the array centre in metres
        geometry: Array geometry
        c: Sound speed in m/s

    Returns:
        DelayProfile with delay_i = (sqrt(r_v^2 + x_i^2) - r_v) / c

    Raises:
        ValueError: If r_v or c is not positive
    """
    if r_v <= 0:
        raise ValueError(f"Virtual source distance must be positive, got {r_v}")
    if c <= 0:
        raise ValueError(f"Sound speed must be positive, got {c}")
    x = geometry.element_x
    delays = (np.hypot(r_v, x) - r_v) / c
    return DelayProfile(delays=_normalize(delays), kind=TxKind.DIVERGING, params={"r_v": r_v})


def focused_delays(
    focus_range: float,
    steer_angle: float,
    geometry: ArrayGeometry,
    c: float = DEFAULT_SOUND_SPEED,
) -> DelayProfile:
    """
    Delay profile converging on a focus at polar (focus_range, steer_angle).

    Args:
        focus_range: Distance of the focus from the array centre in metres
        steer_angle: Steering angle in degrees from broadside
        geometry: Array geometry
        c: Sound speed in m/s

    Returns:
        DelayProfile with delay_i = (max_j |F - e_j| - |F - e_i|) / c
    """
    if focus_range <= 0:
        raise ValueError(f"Focus range must be positive, got {focus_range}")
    if abs(steer_angle) >= 90.0:
        raise ValueError(f"Steering angle must be within (-90, 90) degrees, got {steer_angle}")
    theta = math.radians(steer_angle)
    fx, fz = focus_range * math.sin(theta), focus_range * math.cos(theta)
    dist = np.hypot(fx - geometry.element_x, fz)
    delays = (dist.max() - dist) / c
    return DelayProfile(
        delays=_normalize(delays),
        kind=TxKind.FOCUSED,
        params={"focus_range": focus_range, "steer_angle": steer_angle},
    )


def single_element_delays(index: int, geometry: ArrayGeometry) -> DelayProfile:
    """Profile firing only element `index` (synthetic transmit aperture)."""
    if not 0 <= index < geometry.n_elements:
        raise ValueError(f"Element index {index} outside 0..{geometry.n_elements - 1}")
    active = np.zeros(geometry.n_elements, dtype=bool)
    active[index] = True
    return DelayProfile(
        delays=np.zeros(geometry.n_elements),
        kind=TxKind.SINGLE_ELEMENT,
        params={"element": index},
        active=active,
    )


def sector_angle(r_v: float, aperture: float) -> float:
    """Geometric insonification sector of a diverging wave, in degrees."""
    if r_v <= 0:
        raise ValueError(f"Virtual source distance must be positive, got {r_v}")
    return math.degrees(2.0 * math.atan(aperture / (2.0 * r_v)))


def csf_scan_plan(
    geometry: Optional[ArrayGeometry] = None,
    n_beams: int = CSF_BEAM_COUNT,
    half_angle: float = CSF_SECTOR_HALF_ANGLE,
    focus_range: float = CSF_FOCUS_RANGE,
) -> List[ScanBeam]:
    """
    Beam plan for conventional single-focus sector imaging.

    The default plan steers 181 beams from -45 to +45 degrees in 0.5 degree
    steps, all focused at 40 mm.
    """
    angles = np.linspace(-half_angle, half_angle, n_beams)
    if geometry is not None:
        logger.debug("CSF plan of %d beams for %d elements", n_beams, geometry.n_elements)
    return [ScanBeam(float(a), focus_range) for a in angles]


def frame_rate(n_tx: int, depth: float, c: float = REFERENCE_SOUND_SPEED) -> float:
    """Frames per second for n_tx round trips to `depth`."""
    if n_tx <= 0 or depth <= 0 or c <= 0:
        raise ValueError(f"frame_rate needs positive inputs (n_tx={n_tx}, depth={depth}, c={c})")
    return 1.0 / (n_tx * 2.0 * depth / c)


def wavelengths(n: float) -> float:
    """Convert a length in reference wavelengths to metres."""
    return n * REFERENCE_WAVELENGTH
