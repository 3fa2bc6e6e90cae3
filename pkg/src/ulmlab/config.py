"""Experiment configuration as flat INI sections.

Every key carries SI units (meters, seconds, hertz) unless its name says
otherwise. Tuples are comma-separated; ``none`` marks an absent optional
value and ``inf`` disables noise.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import ArrayConfig, ImagingScheme, VoxelGrid
from .localize import DetectParams
from .phantom import CANONICAL_LAYOUTS, TubeLayout


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ArraySection:
    n_cols: int = 32
    n_rows: int = 32
    pitch: float = 3.0e-4
    element_width: float = 2.75e-4
    kerf: float = 2.5e-5
    rows_per_subaperture: int = 8
    dead_slots: tuple[int, ...] = (8, 17, 26)

    def to_array_config(self) -> ArrayConfig:
        return ArrayConfig(
            self.n_cols, self.n_rows, self.pitch, self.element_width, self.kerf, self.rows_per_subaperture, tuple(self.dead_slots)
        )


@dataclass
class PulseSection:
    center_frequency: float = 7.8e6
    cycles: float = 2.0
    sampling_frequency: float = 31.24e6
    sound_speed: float = 1540.0

    @property
    def wavelength(self) -> float:
        return self.sound_speed / self.center_frequency


@dataclass
class PhantomSection:
    kind: str = "cross"  # cross | sweep
    seed: int = 1
    n_tubes: int = 2
    concentration: int = 1
    total_per_tube: int = 1000
    # empty angle lists select the canonical layout for n_tubes
    azimuths_deg: tuple[float, ...] = ()
    tilts_deg: tuple[float, ...] = ()
    y_offsets: tuple[float, ...] = ()
    crossing_depth: float = 2.0e-2
    tube_radius: float = 1.0e-4
    tube_length: float = 6.0e-3
    sweep_x: float = 0.0
    sweep_z: float = 2.0e-2
    sweep_y_min: float = -5.0e-3
    sweep_y_max: float = 5.0e-3
    sweep_step: float = 2.0e-4

    def layout(self) -> TubeLayout:
        if self.azimuths_deg:
            return TubeLayout(
                tuple(self.azimuths_deg),
                tuple(self.tilts_deg),
                tuple(self.y_offsets),
                (0.0, 0.0, self.crossing_depth),
                self.tube_radius,
                self.tube_length,
            )
        base = CANONICAL_LAYOUTS[self.n_tubes]
        return dataclasses.replace(base, crossing=(0.0, 0.0, self.crossing_depth), radius=self.tube_radius, length=self.tube_length)


@dataclass
class GridSection:
    x_min: float = -4.0e-3
    x_max: float = 4.0e-3
    y_min: float = -5.1e-3
    y_max: float = 5.1e-3
    z_min: float = 1.6e-2
    z_max: float = 2.4e-2
    spacing_x: float = 1.0e-4
    spacing_y: float = 1.0e-4
    spacing_z: float = 1.0e-4

    def grid(self) -> VoxelGrid:
        lo = (self.x_min, self.y_min, self.z_min)
        hi = (self.x_max, self.y_max, self.z_max)
        sp = (self.spacing_x, self.spacing_y, self.spacing_z)
        if min(sp) <= 0 or any(b < a for a, b in zip(lo, hi)):
            raise ValueError("grid spacing must be positive and each max must not be below its min")
        counts = tuple(int(math.floor((b - a) / d + 1e-6)) + 1 for a, b, d in zip(lo, hi, sp))
        return VoxelGrid(lo, sp, counts)


@dataclass
class NoiseSection:
    snr_db: float = math.inf
    seed: int = 2


@dataclass
class BeamformSection:
    apodization: str = "tukey"
    alpha: float = 0.5
    upsample: int = 8
    focal_depth: float = 2.0e-2


@dataclass
class SvdSection:
    mode: str = "off"  # off | manual | auto
    low_cut: int = 0
    high_cut: int | None = None
    corr_threshold: float = 0.2


@dataclass
class LocalizeSection:
    threshold: float = 0.2
    threshold_mode: str = "frame"
    connectivity: int = 0  # 0 = full (8 in 2D, 26 in 3D)
    min_size_2d: int = 2
    max_size_2d: int = 150
    min_size_3d: int = 4
    max_size_3d: int = 1000
    min_solidity: float = 0.7
    max_eccentricity: float = 0.99
    step: float = 1.2
    max_iterations: int = 8
    render_sigma: float = 1.0

    def params(self, ndim: int) -> DetectParams:
        size = (self.min_size_2d, self.max_size_2d) if ndim == 2 else (self.min_size_3d, self.max_size_3d)
        return DetectParams(
            threshold=self.threshold,
            mode=self.threshold_mode,
            connectivity=self.connectivity or None,
            size_range=size,
            min_solidity=self.min_solidity,
            max_eccentricity=self.max_eccentricity,
            step=self.step,
            max_iterations=self.max_iterations,
        )


@dataclass
class MetricsSection:
    tolerance_wavelengths: float = 0.5
    # wider gate used only to pair sweep detections for error curves
    error_gate_wavelengths: float = 2.0
    ring_radii: tuple[float, ...] = (3.5e-4, 7.5e-4)
    angular_step_deg: float = 1.0
    radial_window: int = 2


@dataclass
class ExperimentSection:
    name: str = "experiment"
    schemes: tuple[str, ...] = ("ef", "cs", "vip", "3d")
    output: str = "out"


SECTIONS = {
    "experiment": ExperimentSection,
    "array": ArraySection,
    "pulse": PulseSection,
    "phantom": PhantomSection,
    "grid": GridSection,
    "noise": NoiseSection,
    "beamform": BeamformSection,
    "svd": SvdSection,
    "localize": LocalizeSection,
    "metrics": MetricsSection,
}


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    array: ArraySection = field(default_factory=ArraySection)
    pulse: PulseSection = field(default_factory=PulseSection)
    phantom: PhantomSection = field(default_factory=PhantomSection)
    grid: GridSection = field(default_factory=GridSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    beamform: BeamformSection = field(default_factory=BeamformSection)
    svd: SvdSection = field(default_factory=SvdSection)
    localize: LocalizeSection = field(default_factory=LocalizeSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def schemes(self) -> list[ImagingScheme]:
        return [ImagingScheme.parse(s, self.beamform.focal_depth) for s in self.experiment.schemes]

    def validate(self) -> "ExperimentConfig":
        try:
            self.array.to_array_config()
            self.schemes()
            self.grid.grid()
            self.localize.params(2)
            if self.phantom.kind == "cross":
                self.phantom.layout()
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.phantom.kind not in ("cross", "sweep"):
            raise ConfigError(f"phantom.kind must be 'cross' or 'sweep', got {self.phantom.kind!r}")
        if self.phantom.kind == "cross" and self.phantom.total_per_tube % self.phantom.concentration:
            raise ConfigError("phantom.total_per_tube must be divisible by phantom.concentration")
        if self.svd.mode not in ("off", "manual", "auto"):
            raise ConfigError(f"svd.mode must be off, manual or auto, got {self.svd.mode!r}")
        if len(set(self.experiment.schemes)) != len(self.experiment.schemes):
            raise ConfigError("experiment.schemes lists a scheme twice")
        if "3d" in self.experiment.schemes or "cs" in self.experiment.schemes:
            try:
                self.grid.grid().center_y_index()
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return self

    # --- text form ----------------------------------------------------------

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: _format(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        unknown = set(cp.sections()) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for required in ("experiment", "phantom"):
            if not cp.has_section(required):
                raise ConfigError(f"config is missing the [{required}] section")
        if not cp.has_option("phantom", "seed"):
            raise ConfigError("phantom.seed must be set explicitly")
        if cp.has_option("noise", "snr_db") and not cp.has_option("noise", "seed"):
            if _parse(cp.get("noise", "snr_db"), float, "noise.snr_db") != math.inf:
                raise ConfigError("noise.seed must be set explicitly when noise is enabled")
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            hints = typing.get_type_hints(section_cls)
            values = {}
            if cp.has_section(name):
                known = {f.name for f in dataclasses.fields(section_cls)}
                extra = set(cp[name]) - known
                if extra:
                    raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
                for key, raw in cp[name].items():
                    values[key] = _parse(raw, hints[key], f"{name}.{key}")
            kwargs[name] = section_cls(**values)
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return "inf" if value == math.inf else repr(value)
    return str(value)


def _parse(raw: str, hint, key: str):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is tuple:
            if not raw:
                return ()
            return tuple(args[0](p.strip()) for p in raw.split(","))
        if origin is typing.Union or type(hint).__name__ == "UnionType":
            if raw.lower() == "none":
                return None
            return next(a for a in args if a is not type(None))(raw)
        if hint is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
