"""Ground-truth scatterer sequences: single-scatter sweeps and cross-tube phantoms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Tube:
    """Straight cylindrical vessel around a centerline segment.

    ``point`` is the segment midpoint, ``direction`` its axis (normalized on
    construction), ``length`` the full segment length.
    """

    point: tuple[float, float, float]
    direction: tuple[float, float, float]
    radius: float = 1.0e-4
    length: float = 6.0e-3

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("tube radius must be positive")
        if not self.length > 0:
            raise ValueError("tube length must be positive")
        d = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(d)
        if not norm > 0:
            raise ValueError("tube direction must be non-zero")
        object.__setattr__(self, "direction", tuple(float(v) for v in d / norm))
        object.__setattr__(self, "point", tuple(float(v) for v in self.point))

    @classmethod
    def from_angles(cls, center, azimuth_deg: float, tilt_deg: float, radius: float = 1.0e-4, length: float = 6.0e-3) -> "Tube":
        """Tube through ``center`` with in-plane azimuth and out-of-plane tilt.

        The azimuth is measured in the x-z imaging plane from +x towards +z;
        the tilt rotates the axis out of the y = 0 plane.
        """
        az, tilt = np.radians(azimuth_deg), np.radians(tilt_deg)
        d = (np.cos(tilt) * np.cos(az), np.sin(tilt), np.cos(tilt) * np.sin(az))
        return cls(tuple(center), d, radius, length)

    def _frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d = np.asarray(self.direction)
        helper = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(d, helper)
        e1 /= np.linalg.norm(e1)
        return d, e1, np.cross(d, e1)

    def axial_coordinate(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - np.asarray(self.point)) @ np.asarray(self.direction)

    def distance(self, points) -> np.ndarray:
        """Distance from each point to the centerline segment."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.point)
        d = np.asarray(self.direction)
        t = np.clip(p @ d, -self.length / 2, self.length / 2)
        return np.linalg.norm(p - t[:, None] * d, axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` points uniformly distributed inside the cylinder."""
        d, e1, e2 = self._frame()
        t = rng.uniform(-self.length / 2, self.length / 2, n)
        r = self.radius * np.sqrt(rng.uniform(0.0, 1.0, n))
        phi = rng.uniform(0.0, 2 * np.pi, n)
        off = r[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
        return np.asarray(self.point) + t[:, None] * d + off


@dataclass(frozen=True)
class TubeLayout:
    """Angles (degrees) and elevational offsets (meters) of tubes crossing near one point."""

    azimuths: tuple[float, ...]
    tilts: tuple[float, ...]
    y_offsets: tuple[float, ...]
    crossing: tuple[float, float, float] = (0.0, 0.0, 2.0e-2)
    radius: float = 1.0e-4
    length: float = 6.0e-3

    def __post_init__(self):
        if not len(self.azimuths) == len(self.tilts) == len(self.y_offsets):
            raise ValueError("azimuths, tilts and y_offsets must have one entry per tube")

    @property
    def n_tubes(self) -> int:
        return len(self.azimuths)

    def tubes(self) -> list[Tube]:
        out = []
        for az, tilt, dy in zip(self.azimuths, self.tilts, self.y_offsets):
            c = (self.crossing[0], self.crossing[1] + dy, self.crossing[2])
            out.append(Tube.from_angles(c, az, tilt, self.radius, self.length))
        return out


# Every tube leaves the y = 0 plane so an in-plane scheme only sees the
# stretch near the crossing. Offsets keep the tube walls from overlapping.
CANONICAL_LAYOUTS = {
    2: TubeLayout(azimuths=(-30.0, 30.0), tilts=(45.0, -45.0), y_offsets=(-1.0e-4, 1.0e-4)),
    5: TubeLayout(
        azimuths=(-60.0, -30.0, 0.0, 30.0, 60.0),
        tilts=(40.0, -50.0, 45.0, -40.0, 50.0),
        y_offsets=(-2.0e-4, -1.0e-4, 0.0, 1.0e-4, 2.0e-4),
    ),
}


@dataclass(eq=False)
class PhantomSequence:
    """Per-frame scatterer positions (float32, meters) and their tube ids."""

    frames: list[np.ndarray]
    tube_ids: list[np.ndarray]
    tubes: list[Tube] = field(default_factory=list)
    seed: int | None = None
    concentration: int = 1

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def counts_per_tube(self) -> np.ndarray:
        n = max(len(self.tubes), 1)
        ids = np.concatenate(self.tube_ids) if self.tube_ids else np.zeros(0, int)
        return np.bincount(ids, minlength=n)


def single_scatter_sweep(
    x0: float = 0.0,
    z0: float = 2.0e-2,
    y_range: tuple[float, float] = (-5.0e-3, 5.0e-3),
    step: float = 2.0e-4,
) -> PhantomSequence:
    """One scatterer per frame at ``(x0, y_k, z0)`` stepping through ``y_range``."""
    lo, hi = map(float, y_range)
    if not step > 0:
        raise ValueError("sweep step must be positive")
    if hi < lo:
        raise ValueError("y_range must be ordered (low, high)")
    n = int(round((hi - lo) / step)) + 1
    k = np.arange(n)
    # endpoint-weighted form keeps the sweep exactly symmetric for symmetric ranges
    ys = (lo * (n - 1 - k) + hi * k) / (n - 1) if n > 1 else np.array([lo])
    frames = [np.array([[x0, y, z0]], dtype=np.float32) for y in ys]
    return PhantomSequence(frames, [np.zeros(1, np.int64) for _ in ys], [], None, 1)


def cross_tube_phantom(
    n_tubes: int,
    scatterers_per_tube_per_frame: int,
    total_per_tube: int,
    seed: int,
    layout: TubeLayout | None = None,
) -> PhantomSequence:
    """Cross-tube phantom with ``scatterers_per_tube_per_frame`` fresh draws per tube and frame.

    Frames are independent: frame ``k`` uses ``SeedSequence([seed, k])``, so
    any frame can be regenerated on its own.
    """
    layout = layout or CANONICAL_LAYOUTS.get(n_tubes)
    if layout is None:
        raise ValueError(f"no canonical layout for {n_tubes} tubes; pass one explicitly")
    if layout.n_tubes != n_tubes:
        raise ValueError(f"layout has {layout.n_tubes} tubes, expected {n_tubes}")
    conc = int(scatterers_per_tube_per_frame)
    if conc < 1:
        raise ValueError("scatterers per tube per frame must be >= 1")
    if total_per_tube % conc:
        raise ValueError(f"total_per_tube={total_per_tube} is not divisible by concentration {conc}")
    tubes = layout.tubes()
    frames, ids = [], []
    for k in range(total_per_tube // conc):
        frames_k, ids_k = draw_frame(tubes, conc, np.random.SeedSequence([seed, k]))
        frames.append(frames_k)
        ids.append(ids_k)
    return PhantomSequence(frames, ids, tubes, seed, conc)


def draw_frame(tubes: Sequence[Tube], per_tube: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Float32 positions for one frame, ``per_tube`` per tube in tube order."""
    rng = np.random.default_rng(seed)
    out = []
    for t in tubes:
        pts = t.sample(per_tube, rng).astype(np.float32)
        # rounding to float32 can push a wall sample just outside; redraw those
        bad = t.distance(pts) > t.radius
        while bad.any():
            pts[bad] = t.sample(int(bad.sum()), rng).astype(np.float32)
            bad = t.distance(pts) > t.radius
        out.append(pts)
    ids = np.repeat(np.arange(len(tubes)), per_tube)
    return np.concatenate(out), ids
