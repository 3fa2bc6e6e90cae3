"""Matrix-array aperture, voxel grids and per-scheme channel reduction maps.

Coordinates are in meters: x is lateral (along the array columns), y is
elevational (across rows, the direction that carries the dead rows) and z is
depth. The aperture lies in the z = 0 plane and is centered on the origin.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SOUND_SPEED = 1540.0


class Scheme(str, Enum):
    THREE_D = "3d"
    VIP = "vip"
    EF = "ef"
    CS = "cs"

    @property
    def is_planar(self) -> bool:
        """True for schemes that produce a single y = 0 image plane."""
        return self is not Scheme.THREE_D


@dataclass(frozen=True)
class ImagingScheme:
    kind: Scheme
    focal_depth: float = 2.0e-2

    def __post_init__(self):
        object.__setattr__(self, "kind", Scheme(self.kind))
        if self.kind is Scheme.EF and not self.focal_depth > 0:
            raise ValueError(f"EF scheme needs a positive focal depth, got {self.focal_depth}")

    @classmethod
    def parse(cls, name: str, focal_depth: float = 2.0e-2) -> "ImagingScheme":
        return cls(Scheme(name.strip().lower()), focal_depth)

    @property
    def name(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class ArrayConfig:
    """Build parameters of the matrix array.

    ``dead_slots`` lists physical row slots (0-indexed, along y) that carry no
    element. ``None`` places one empty slot after every
    ``rows_per_subaperture`` active rows.
    """

    n_cols: int = 32
    n_rows: int = 32
    pitch: float = 3.0e-4
    element_width: float = 2.75e-4
    kerf: float = 2.5e-5
    rows_per_subaperture: int = 8
    dead_slots: tuple[int, ...] | None = None

    def resolved_dead_slots(self) -> tuple[int, ...]:
        if self.dead_slots is not None:
            return tuple(sorted(int(s) for s in self.dead_slots))
        n_sub = -(-self.n_rows // self.rows_per_subaperture)
        return tuple((k + 1) * self.rows_per_subaperture + k for k in range(n_sub - 1))


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    element_positions: np.ndarray  # (n_elements, 3)
    column_index: np.ndarray  # lateral column of each element
    row_index: np.ndarray  # active elevational row of each element
    n_cols: int
    n_rows: int
    pitch: float
    element_width: float
    kerf: float
    dead_row_indices: tuple[int, ...]
    config: ArrayConfig = field(repr=False)

    @property
    def n_elements(self) -> int:
        return self.element_positions.shape[0]

    @property
    def column_x(self) -> np.ndarray:
        """Lateral coordinate of each column, ascending."""
        xs = np.zeros(self.n_cols)
        xs[self.column_index] = self.element_positions[:, 0]
        return xs

    @property
    def row_y(self) -> np.ndarray:
        ys = np.zeros(self.n_rows)
        ys[self.row_index] = self.element_positions[:, 1]
        return ys

    def digest(self) -> bytes:
        """16-byte hash of the build parameters, used for provenance headers."""
        return geometry_digest(self.config)


def geometry_digest(config: ArrayConfig) -> bytes:
    c = config
    text = (
        f"{c.n_cols}|{c.n_rows}|{c.pitch!r}|{c.element_width!r}|{c.kerf!r}|"
        f"{','.join(map(str, c.resolved_dead_slots()))}"
    )
    return hashlib.sha256(text.encode()).digest()[:16]


def build_array(config: ArrayConfig | None = None) -> ArrayGeometry:
    """Lay out the active elements of a matrix array, centered on the origin.

    Elements are ordered column by column (all rows of column 0 first), so
    every elevational column is a contiguous block of ``n_rows`` elements.
    """
    config = config or ArrayConfig()
    for name in ("n_cols", "n_rows", "rows_per_subaperture"):
        if getattr(config, name) < 1:
            raise ValueError(f"{name} must be positive")
    for name in ("pitch", "element_width"):
        if not getattr(config, name) > 0:
            raise ValueError(f"{name} must be positive")
    if config.kerf < 0:
        raise ValueError("kerf must be non-negative")
    if not np.isclose(config.pitch, config.element_width + config.kerf, rtol=0, atol=1e-12):
        raise ValueError(
            f"pitch {config.pitch} != element_width {config.element_width} + kerf {config.kerf}"
        )

    dead = config.resolved_dead_slots()
    n_slots = config.n_rows + len(dead)
    if any(s < 0 or s >= n_slots for s in dead) or len(set(dead)) != len(dead):
        raise ValueError(f"dead slots {dead} do not fit {n_slots} physical slots")
    active_slots = np.array([s for s in range(n_slots) if s not in dead])

    x = (np.arange(config.n_cols) - (config.n_cols - 1) / 2) * config.pitch
    y = (active_slots - (n_slots - 1) / 2) * config.pitch

    col, row = np.meshgrid(np.arange(config.n_cols), np.arange(config.n_rows), indexing="ij")
    col = col.ravel()
    row = row.ravel()
    pos = np.column_stack([x[col], y[row], np.zeros(col.size)])
    pos.setflags(write=False)
    return ArrayGeometry(
        element_positions=pos,
        column_index=col,
        row_index=row,
        n_cols=config.n_cols,
        n_rows=config.n_rows,
        pitch=config.pitch,
        element_width=config.element_width,
        kerf=config.kerf,
        dead_row_indices=dead,
        config=config,
    )


def lens_delay(y, focal_depth: float, c: float = SOUND_SPEED):
    """Fixed elevational lens delay ``(sqrt(y^2 + F^2) - F) / c`` in seconds."""
    y = np.asarray(y, dtype=float)
    return (np.hypot(y, focal_depth) - focal_depth) / c


@dataclass(frozen=True, eq=False)
class ChannelMap:
    """How the full element set is reduced to the channels a scheme records.

    ``groups[k]`` lists the element indices summed into output channel ``k``;
    ``positions[k]`` is where the beamformer places that channel. For EF,
    ``element_delays`` holds the per-element lens delay (zero otherwise).
    """

    scheme: ImagingScheme
    groups: tuple[np.ndarray, ...]
    positions: np.ndarray
    lateral_index: np.ndarray  # column of each output channel, for apodization
    element_delays: np.ndarray

    @property
    def n_channels(self) -> int:
        return len(self.groups)

    @property
    def reduces(self) -> bool:
        return self.scheme.kind in (Scheme.VIP, Scheme.EF)


def channel_map(scheme: ImagingScheme, geom: ArrayGeometry, c: float = SOUND_SPEED) -> ChannelMap:
    delays = np.zeros(geom.n_elements)
    if scheme.kind in (Scheme.VIP, Scheme.EF):
        groups = tuple(np.flatnonzero(geom.column_index == k) for k in range(geom.n_cols))
        positions = np.column_stack([geom.column_x, np.zeros(geom.n_cols), np.zeros(geom.n_cols)])
        lateral = np.arange(geom.n_cols)
        if scheme.kind is Scheme.EF:
            delays = lens_delay(geom.element_positions[:, 1], scheme.focal_depth, c)
    else:
        groups = tuple(np.array([e]) for e in range(geom.n_elements))
        positions = geom.element_positions.copy()
        lateral = geom.column_index.copy()
    return ChannelMap(scheme, groups, positions, lateral, delays)


@dataclass(frozen=True)
class VoxelGrid:
    """Regular voxel grid; axis ``k`` samples ``origin[k] + i * spacing[k]``."""

    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    counts: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))
        if len(self.origin) != 3 or len(self.spacing) != 3 or len(self.counts) != 3:
            raise ValueError("grid needs three axes")
        if not all(s > 0 for s in self.spacing):
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")
        if not all(n >= 1 for n in self.counts):
            raise ValueError(f"grid counts must be >= 1, got {self.counts}")

    @classmethod
    def from_extent(cls, x, y, z, spacing: float) -> "VoxelGrid":
        """Grid covering closed intervals ``x``, ``y``, ``z`` at isotropic spacing.

        A degenerate interval (min == max) gives a single-sample axis.
        """
        lo = []
        n = []
        for a, b in (x, y, z):
            if b < a:
                raise ValueError(f"interval ({a}, {b}) is reversed")
            lo.append(a)
            n.append(int(np.floor((b - a) / spacing + 1e-6)) + 1)
        return cls(tuple(lo), (spacing,) * 3, tuple(n))

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(o + np.arange(n) * d for o, d, n in zip(self.origin, self.spacing, self.counts))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def upper(self) -> tuple[float, float, float]:
        return tuple(o + (n - 1) * d for o, d, n in zip(self.origin, self.spacing, self.counts))

    def central_plane(self) -> "VoxelGrid":
        """The y = 0 plane of this grid as a single-slice grid."""
        return VoxelGrid((self.origin[0], 0.0, self.origin[2]), self.spacing, (self.counts[0], 1, self.counts[2]))

    def center_y_index(self) -> int:
        ny = self.counts[1]
        if ny % 2 == 0:
            raise ValueError(f"grid has an even number of y samples ({ny}); use an odd count so y = 0 is sampled")
        k = ny // 2
        if not abs(self.origin[1] + k * self.spacing[1]) < 1e-9:
            raise ValueError("grid y axis is not centered on y = 0")
        return k

    def index_to_position(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=float)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def position_to_index(self, pos) -> np.ndarray:
        pos = np.asarray(pos, dtype=float)
        return (pos - np.asarray(self.origin)) / np.asarray(self.spacing)

    def contains(self, pos, margin: float = 0.0) -> np.ndarray:
        pos = np.atleast_2d(pos)
        lo = np.asarray(self.origin) - margin
        hi = np.asarray(self.upper) + margin
        planar = np.asarray(self.counts) == 1
        ok = (pos >= lo - 1e-12) & (pos <= hi + 1e-12)
        ok[:, planar] = True
        return ok.all(axis=1)
