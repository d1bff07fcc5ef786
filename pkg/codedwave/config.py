#!/usr/bin/env python3
"""
Experiment configuration: sectioned `key = value` files with validated defaults.

Every default is a measurement parameter of the imaging setup. Parsing
collects every problem in the file before raising, so one run reports all
of them.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import configparser
import logging

from codedwave.acoustics import ElementResponse, Medium, PinLayout, element_impulse_response
from codedwave.codes import CodedExcitation, NoKnownPairError, golay_pair, make_excitation
from codedwave.txprofiles import ArrayGeometry

logger = logging.getLogger(__name__)

SCHEMES = ("dw", "sta", "csf")
CODE_LENGTHS = (1, 2, 4, 8, 10)
CSF_FILTERS = ("gaussian", "matched")
PHANTOM_PRESETS = tuple(p.value for p in PinLayout) + ("speckle", "file")
DEFAULT_RV_MM = 14.0


class ConfigError(ValueError):
    """Invalid configuration; `violations` lists every problem found."""

    def __init__(self, violations: List[str], source: str = "<config>"):
        self.violations = list(violations)
        self.source = source
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} problem(s) in {source}:\n{lines}")


@dataclass(frozen=True)
class GeometryConfig:
    n_elements: int = 128
    pitch_mm: float = 0.1


@dataclass(frozen=True)
class MediumConfig:
    sound_speed: float = 1450.0
    attenuation: float = 0.5  # dB / (MHz cm)


@dataclass(frozen=True)
class ExcitationConfig:
    code_bits: Optional[int] = None  # None: 8 for dw, 1 otherwise
    carrier_mhz: float = 7.5
    cycles_per_chip: int = 2
    sample_rate_mhz: float = 80.0
    fractional_bw: float = 0.70


@dataclass(frozen=True)
class SchemeConfig:
    name: str = "dw"
    rv_mm: Optional[float] = DEFAULT_RV_MM
    focus_mm: float = 40.0
    beams: int = 181
    half_angle: float = 45.0
    csf_filter: str = "gaussian"


@dataclass(frozen=True)
class PhantomConfig:
    preset: str = "full_model550"
    file: Optional[str] = None
    reflectivity: float = 1.0
    speckle_density: float = 5.0  # scatterers / mm^2
    speckle_depth_mm: float = 30.0
    speckle_width_mm: float = 20.0
    cyst_x_mm: float = 0.0
    cyst_z_mm: float = 20.0
    cyst_diameter_mm: float = 0.0  # 0: no cyst
    roi_mm: float = 2.0
    roi_step_mm: float = 0.5  # ROI diameter sweep step
    positions: int = 1  # lateral phantom positions for the CNR spread
    position_step_mm: float = 1.0


@dataclass(frozen=True)
class NoiseConfig:
    power: float = 0.0
    realizations: int = 13


@dataclass(frozen=True)
class GainConfig:
    fixed_db: float = 22.0
    tgc_db_per_cm: float = 2.3


@dataclass(frozen=True)
class ImagingConfig:
    max_depth_mm: float = 75.0
    half_angle: float = 45.0
    angle_step: float = 0.5
    decimation: int = 4
    dynamic_range_db: float = 60.0
    target_mean_db: float = 32.0
    pixel_mm: float = 0.1
    compensate: bool = True


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "output"
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one acquisition and processing run."""

    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    medium: MediumConfig = field(default_factory=MediumConfig)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    gain: GainConfig = field(default_factory=GainConfig)
    imaging: ImagingConfig = field(default_factory=ImagingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def code_bits(self) -> int:
        if self.excitation.code_bits is not None:
            return self.excitation.code_bits
        return 8 if self.scheme.name == "dw" else 1

    @property
    def seed(self) -> int:
        return self.output.seed

    @property
    def sample_rate(self) -> float:
        return self.excitation.sample_rate_mhz * 1e6

    @property
    def r_v(self) -> float:
        if self.scheme.rv_mm is None:
            raise ValueError(f"Scheme '{self.scheme.name}' has no virtual source")
        return self.scheme.rv_mm * 1e-3

    @property
    def max_depth(self) -> float:
        return self.imaging.max_depth_mm * 1e-3

    def array_geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.geometry.n_elements, self.geometry.pitch_mm * 1e-3)

    def medium_model(self) -> Medium:
        return Medium(self.medium.sound_speed, self.medium.attenuation)

    def element_response(self) -> ElementResponse:
        return element_impulse_response(
            self.excitation.carrier_mhz * 1e6, self.excitation.fractional_bw, self.sample_rate
        )

    def make_excitation(self) -> CodedExcitation:
        return make_excitation(
            self.code_bits,
            self.excitation.carrier_mhz * 1e6,
            self.excitation.cycles_per_chip,
            self.sample_rate,
        )

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {f.name: {g.name: getattr(getattr(self, f.name), g.name)
                         for g in fields(getattr(self, f.name))}
                for f in fields(self)}


_SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}  # type: ignore[misc]


def _convert(raw: str, kind: Any) -> Any:
    text = raw.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in ("1", "yes", "true", "on"):
            return True
        if lowered in ("0", "no", "false", "off"):
            return False
        raise ValueError(f"not a boolean: '{raw}'")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _field_kind(section_cls: Any, name: str) -> Any:
    default = next(f.default for f in fields(section_cls) if f.name == name)
    annotation = next(f.type for f in fields(section_cls) if f.name == name)
    text = str(annotation)
    for kind in (bool, int, float):
        if kind.__name__ in text:
            return kind
    return type(default) if default is not None else str


def validate(config: ExperimentConfig) -> List[str]:
    """All consistency violations of a configuration."""
    problems: List[str] = []
    g, m, e, s = config.geometry, config.medium, config.excitation, config.scheme
    if g.n_elements <= 0:
        problems.append(f"geometry.n_elements must be positive, got {g.n_elements}")
    if g.pitch_mm <= 0:
        problems.append(f"geometry.pitch_mm must be positive, got {g.pitch_mm}")
    if m.sound_speed <= 0:
        problems.append(f"medium.sound_speed must be positive, got {m.sound_speed}")
    if m.attenuation < 0:
        problems.append(f"medium.attenuation must be non-negative, got {m.attenuation}")

    if e.code_bits is not None:
        if e.code_bits > 1:
            try:
                golay_pair(e.code_bits)
            except NoKnownPairError as exc:
                problems.append(f"excitation.code_bits: {exc}")
        if e.code_bits not in CODE_LENGTHS and not any("code_bits" in p for p in problems):
            problems.append(f"excitation.code_bits must be one of {CODE_LENGTHS}, got {e.code_bits}")
    if e.cycles_per_chip <= 0:
        problems.append(f"excitation.cycles_per_chip must be positive, got {e.cycles_per_chip}")
    if e.sample_rate_mhz < 4 * e.carrier_mhz:
        problems.append(
            f"excitation.sample_rate_mhz ({e.sample_rate_mhz}) must be at least 4x carrier_mhz ({e.carrier_mhz})"
        )
    if not 0.0 < e.fractional_bw < 2.0:
        problems.append(f"excitation.fractional_bw must lie in (0, 2), got {e.fractional_bw}")

    if s.name not in SCHEMES:
        problems.append(f"scheme.name must be one of {SCHEMES}, got '{s.name}'")
    elif s.name == "dw":
        if s.rv_mm is None:
            problems.append("scheme 'dw' requires rv_mm")
        elif not 0 < s.rv_mm <= 100.0:
            problems.append(f"scheme.rv_mm must lie in (0, 100], got {s.rv_mm}")
    elif s.rv_mm is not None:
        problems.append(f"scheme '{s.name}' does not use rv_mm")
    if s.csf_filter not in CSF_FILTERS:
        problems.append(f"scheme.csf_filter must be one of {CSF_FILTERS}, got '{s.csf_filter}'")
    if s.name == "csf" and s.csf_filter == "gaussian" and config.code_bits != 1:
        problems.append("scheme.csf_filter 'gaussian' needs the uncoded pulse (code_bits = 1)")
    if s.beams <= 0 or s.focus_mm <= 0:
        problems.append("scheme.beams and scheme.focus_mm must be positive")

    p = config.phantom
    if p.preset not in PHANTOM_PRESETS:
        problems.append(f"phantom.preset must be one of {PHANTOM_PRESETS}, got '{p.preset}'")
    if p.preset == "file" and not p.file:
        problems.append("phantom preset 'file' requires phantom.file")
    if p.speckle_density <= 0:
        problems.append(f"phantom.speckle_density must be positive, got {p.speckle_density}")
    if p.cyst_diameter_mm < 0 or p.roi_mm <= 0:
        problems.append("phantom.cyst_diameter_mm must be non-negative and phantom.roi_mm positive")
    if p.roi_step_mm <= 0 or p.position_step_mm <= 0:
        problems.append("phantom.roi_step_mm and phantom.position_step_mm must be positive")
    if p.positions <= 0:
        problems.append(f"phantom.positions must be positive, got {p.positions}")

    if config.noise.power < 0:
        problems.append(f"noise.power must be non-negative, got {config.noise.power}")
    if config.noise.realizations <= 0:
        problems.append(f"noise.realizations must be positive, got {config.noise.realizations}")

    im = config.imaging
    if im.max_depth_mm <= 0:
        problems.append(f"imaging.max_depth_mm must be positive, got {im.max_depth_mm}")
    if not 0 < im.half_angle < 90:
        problems.append(f"imaging.half_angle must lie in (0, 90), got {im.half_angle}")
    if im.angle_step <= 0 or im.decimation <= 0 or im.pixel_mm <= 0:
        problems.append("imaging.angle_step, decimation and pixel_mm must be positive")
    if im.dynamic_range_db <= 0 or not 0 < im.target_mean_db < im.dynamic_range_db:
        problems.append("imaging.target_mean_db must lie inside (0, dynamic_range_db)")
    return problems


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """
    Parse configuration text.

    Raises:
        ConfigError: Listing unknown sections and keys, unconvertible values
            and inconsistent settings
    """
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([str(exc)], source) from exc

    problems: List[str] = []
    sections: Dict[str, Any] = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            problems.append(f"unknown section [{name}]")
            continue
        section_cls = _SECTIONS[name]
        known = {f.name for f in fields(section_cls)}
        values: Dict[str, Any] = {}
        for key, raw in parser.items(name):
            if key not in known:
                problems.append(f"unknown key '{key}' in [{name}]")
                continue
            try:
                values[key] = _convert(raw, _field_kind(section_cls, key))
            except ValueError as exc:
                problems.append(f"{name}.{key}: {exc}")
        sections[name] = values

    scheme_values = sections.get("scheme", {})
    # an explicit scheme name must bring its own virtual source
    if "name" in scheme_values and "rv_mm" not in scheme_values:
        scheme_values["rv_mm"] = None

    kwargs = {}
    for name, values in sections.items():
        try:
            kwargs[name] = _SECTIONS[name](**values)
        except TypeError as exc:
            problems.append(f"[{name}]: {exc}")
    config = ExperimentConfig(**kwargs)
    problems.extend(validate(config))
    if problems:
        raise ConfigError(problems, source)
    return config


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate a configuration file.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the file is invalid
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise type(exc)(f"Cannot read configuration {path}: {exc.strerror or exc}") from exc
    config = parse_config_text(text, str(path))
    logger.info("Loaded configuration from %s (scheme %s)", path, config.scheme.name)
    return config


def apply_overrides(
    config: ExperimentConfig,
    scheme: Optional[str] = None,
    code_bits: Optional[int] = None,
    rv_mm: Optional[float] = None,
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> ExperimentConfig:
    """Return a validated copy with command-line values applied."""
    scheme_cfg = config.scheme
    if scheme is not None and scheme != scheme_cfg.name:
        default_rv = DEFAULT_RV_MM if scheme == "dw" else None
        scheme_cfg = replace(scheme_cfg, name=scheme, rv_mm=default_rv)
    if rv_mm is not None:
        scheme_cfg = replace(scheme_cfg, rv_mm=rv_mm)
    excitation = config.excitation
    if code_bits is not None:
        excitation = replace(excitation, code_bits=code_bits)
    output = config.output
    if seed is not None:
        output = replace(output, seed=seed)
    if out is not None:
        output = replace(output, directory=out)

    updated = replace(config, scheme=scheme_cfg, excitation=excitation, output=output)
    problems = validate(updated)
    if problems:
        raise ConfigError(problems, "command line")
    return updated


def format_config(config: ExperimentConfig) -> str:
    """Render a configuration as parseable text."""
    lines: List[str] = []
    for section, values in config.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if value is not None:
                lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
