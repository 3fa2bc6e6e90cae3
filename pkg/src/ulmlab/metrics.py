"""Detection scoring, localization errors, elevational sensitivity and radial profiles."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from scipy.signal import find_peaks

from .geometry import VoxelGrid

SCHEME_ORDER = ("ef", "cs", "vip", "3d")
SCHEME_LABELS = {"ef": "EF", "cs": "CS", "vip": "VIP", "3d": "3D"}


@dataclass(eq=False)
class FrameMatch:
    pairs: np.ndarray  # (k, 2) indices into (detected, truth)
    displacement: np.ndarray  # (k, 3) detected - truth, meters
    n_detected: int
    n_truth: int

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return self.n_detected - self.tp

    @property
    def fn(self) -> int:
        return self.n_truth - self.tp


def match_points(detected, truth, tol: float, planar: bool = False) -> FrameMatch:
    """Pair detections with truths closer than ``tol``.

    The matching maximizes the number of pairs and, among maximal
    matchings, minimizes the summed pair distance. With ``planar=True``
    distances ignore y, which compares 2D-scheme detections with the
    (x, z) projection of the truth.
    """
    if not tol > 0:
        raise ValueError("match tolerance must be positive")
    det = np.asarray(detected, dtype=float).reshape(-1, 3)
    tru = np.asarray(truth, dtype=float).reshape(-1, 3)
    d_use, t_use = (det[:, [0, 2]], tru[:, [0, 2]]) if planar else (det, tru)
    empty = FrameMatch(np.zeros((0, 2), np.int64), np.zeros((0, 3)), len(det), len(tru))
    if len(det) == 0 or len(tru) == 0:
        return empty
    dist = np.linalg.norm(d_use[:, None, :] - t_use[None, :, :], axis=2)
    valid = dist <= tol
    if not valid.any():
        return empty
    # any extra pair outweighs the largest possible total distance
    big = 2.0 * tol * (min(dist.shape) + 1)
    cost = np.where(valid, dist - big, 0.0)
    rows, cols = linear_sum_assignment(cost)
    keep = valid[rows, cols]
    rows, cols = rows[keep], cols[keep]
    order = np.argsort(rows)
    pairs = np.column_stack([rows[order], cols[order]])
    disp = det[pairs[:, 0]] - tru[pairs[:, 1]]
    if planar:
        disp[:, 1] = 0.0
    return FrameMatch(pairs, disp, len(det), len(tru))


@dataclass(eq=False)
class MatchResult:
    """Matches pooled over frames."""

    frames: list[FrameMatch]
    tol: float
    truth_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    frame_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def tp(self) -> int:
        return sum(f.tp for f in self.frames)

    @property
    def fp(self) -> int:
        return sum(f.fp for f in self.frames)

    @property
    def fn(self) -> int:
        return sum(f.fn for f in self.frames)

    @property
    def displacement(self) -> np.ndarray:
        parts = [f.displacement for f in self.frames]
        return np.concatenate(parts) if parts else np.zeros((0, 3))


def match_frames(detected_frames, truth_frames, tol: float, planar: bool = False) -> MatchResult:
    if len(detected_frames) != len(truth_frames):
        raise ValueError(f"{len(detected_frames)} detection frames vs {len(truth_frames)} truth frames")
    frames, truths, fidx = [], [], []
    for i, (d, t) in enumerate(zip(detected_frames, truth_frames)):
        m = match_points(d, t, tol, planar)
        frames.append(m)
        tpos = np.asarray(t, dtype=float).reshape(-1, 3)[m.pairs[:, 1]]
        truths.append(tpos)
        fidx.append(np.full(m.tp, i))
    return MatchResult(
        frames,
        tol,
        np.concatenate(truths) if truths else np.zeros((0, 3)),
        np.concatenate(fidx) if fidx else np.zeros(0, np.int64),
    )


@dataclass(frozen=True)
class Scores:
    precision: float | None
    sensitivity: float | None
    jaccard: float | None


def scores(tp: int, fp: int, fn: int) -> Scores:
    """Pooled precision, sensitivity and Jaccard index; ``None`` where a ratio is undefined."""

    def ratio(a, b):
        return a / b if b > 0 else None

    return Scores(ratio(tp, tp + fp), ratio(tp, tp + fn), ratio(tp, tp + fp + fn))


def match_scores(m: MatchResult) -> Scores:
    return scores(m.tp, m.fp, m.fn)


@dataclass(eq=False)
class ErrorStats:
    """Signed per-axis errors (detected - truth) in wavelengths for every matched pair."""

    truth: np.ndarray
    frame_index: np.ndarray
    errors: np.ndarray  # (n, 3) in wavelengths
    mean: np.ndarray
    max_abs: np.ndarray

    @property
    def n(self) -> int:
        return len(self.errors)


def error_stats(m: MatchResult, wavelength: float) -> ErrorStats | None:
    """Per-pair errors in units of ``wavelength``; ``None`` without any match."""
    disp = m.displacement
    if len(disp) == 0:
        return None
    err = disp / wavelength
    return ErrorStats(m.truth_positions, m.frame_index, err, err.mean(axis=0), np.abs(err).max(axis=0))


def elevational_sensitivity(frames_by_scheme: dict, ys) -> dict:
    """Per-frame global peak of each scheme's stack, normalized to the frame closest to y = 0."""
    ys = np.asarray(ys, dtype=float)
    k0 = int(np.argmin(np.abs(ys)))
    out = {}
    for scheme, frames in frames_by_scheme.items():
        frames = np.asarray(frames)
        peaks = frames.reshape(frames.shape[0], -1).max(axis=1).astype(float)
        out[scheme] = peaks / peaks[k0] if peaks[k0] > 0 else np.full_like(peaks, np.nan)
    return out


def radial_profile(
    image,
    grid: VoxelGrid,
    center: tuple[float, float],
    radius: float,
    angular_step: float = 1.0,
    radial_window: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean intensity along a half ring, as ``(angles_deg, values)``.

    ``image`` is an (nx, nz) plane on the x/z axes of ``grid``; ``center``
    is ``(x, z)``. Angles run from 0 to 180 degrees, measured from +x
    towards +z. Each angle averages bilinear samples at radii
    ``radius + k * pixel`` for ``|k| <= radial_window``.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("radial_profile needs a 2D (x, z) image")
    dx, dz = grid.spacing[0], grid.spacing[2]
    pixel = 0.5 * (dx + dz)
    angles = np.arange(0.0, 180.0 + angular_step / 2, angular_step)
    th = np.radians(angles)
    k = np.arange(-radial_window, radial_window + 1)
    r = radius + k[:, None] * pixel
    x = center[0] + r * np.cos(th)[None, :]
    z = center[1] + r * np.sin(th)[None, :]
    ix = (x - grid.origin[0]) / dx
    iz = (z - grid.origin[2]) / dz
    eps = 1e-9
    if ix.min() < -eps or iz.min() < -eps or ix.max() > img.shape[0] - 1 + eps or iz.max() > img.shape[1] - 1 + eps:
        raise ValueError("ring extends beyond the image")
    vals = ndimage.map_coordinates(img, [ix.ravel(), iz.ravel()], order=1, mode="nearest").reshape(ix.shape)
    return angles, vals.mean(axis=0)


def count_peaks(curve, rel_prominence: float = 0.25, min_height: float = 0.0) -> np.ndarray:
    """Indices of peaks whose prominence is at least ``rel_prominence`` of the curve maximum."""
    curve = np.asarray(curve, dtype=float)
    top = curve.max() if curve.size else 0.0
    if not top > 0 or top < min_height:
        return np.zeros(0, np.int64)
    # zero padding lets a maximum sitting on either end of the half ring count
    padded = np.concatenate([[0.0], curve, [0.0]])
    peaks, _ = find_peaks(padded, prominence=rel_prominence * top, height=max(min_height, 1e-300))
    return peaks - 1


def ring_crossings(tubes, center: tuple[float, float, float], radius: float) -> list[tuple[float, float]]:
    """Where tube centerlines, projected onto x-z, cross the half ring around ``center``.

    Returns ``(angle_deg, y)`` pairs, ``y`` being the centerline's elevation
    at the crossing; angles follow :func:`radial_profile`.
    """
    cx, cy, cz = center
    out = []
    for t in tubes:
        p = np.asarray(t.point) - np.array([cx, cy, cz])
        d = np.asarray(t.direction)
        a = d[0] ** 2 + d[2] ** 2
        if a == 0:
            continue
        b = 2 * (p[0] * d[0] + p[2] * d[2])
        c = p[0] ** 2 + p[2] ** 2 - radius**2
        disc = b * b - 4 * a * c
        if disc < 0:
            continue
        for s in ((-b - np.sqrt(disc)) / (2 * a), (-b + np.sqrt(disc)) / (2 * a)):
            if abs(s) > t.length / 2:
                continue
            q = p + s * d
            ang = np.degrees(np.arctan2(q[2], q[0]))
            if -1e-9 <= ang <= 180 + 1e-9:
                out.append((float(ang), float(q[1] + cy)))
    return sorted(out)


# --- reports ------------------------------------------------------------------

REPORT_FIELDS = ["phantom", "concentration", "scheme", "frames", "tp", "fp", "fn", "precision", "sensitivity", "jaccard"]


@dataclass
class MetricsRow:
    phantom: str
    concentration: int
    scheme: str
    frames: int
    tp: int
    fp: int
    fn: int

    @property
    def scores(self) -> Scores:
        return scores(self.tp, self.fp, self.fn)

    def as_dict(self) -> dict:
        s = self.scores
        fmt = lambda v: "n/a" if v is None else f"{v:.6f}"
        return {
            "phantom": self.phantom,
            "concentration": self.concentration,
            "scheme": self.scheme,
            "frames": self.frames,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": fmt(s.precision),
            "sensitivity": fmt(s.sensitivity),
            "jaccard": fmt(s.jaccard),
        }


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r.as_dict())


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [
            MetricsRow(r["phantom"], int(r["concentration"]), r["scheme"], int(r["frames"]), int(r["tp"]), int(r["fp"]), int(r["fn"]))
            for r in csv.DictReader(fh)
        ]


def format_table(rows) -> str:
    """Precision / sensitivity / J.I. per phantom and concentration, one column per scheme."""
    rows = list(rows)
    schemes = [s for s in SCHEME_ORDER if any(r.scheme == s for r in rows)]
    schemes += sorted({r.scheme for r in rows} - set(schemes))
    header = f"{'phantom':<16}{'metric':<13}" + "".join(f"{SCHEME_LABELS.get(s, s):>8}" for s in schemes)
    lines = [header, "-" * len(header)]
    groups = []
    for r in rows:
        key = (r.phantom, r.concentration)
        if key not in groups:
            groups.append(key)
    for phantom, conc in groups:
        by = {r.scheme: r.scores for r in rows if (r.phantom, r.concentration) == (phantom, conc)}
        label = f"{phantom} c={conc}"
        for metric, name in (("precision", "Precision"), ("sensitivity", "Sensitivity"), ("jaccard", "J.I.")):
            cells = []
            for s in schemes:
                v = getattr(by[s], metric) if s in by else None
                cells.append(f"{'n/a' if v is None else f'{v:.2f}':>8}")
            lines.append(f"{label:<16}{name:<13}" + "".join(cells))
            label = ""
    return "\n".join(lines) + "\n"
