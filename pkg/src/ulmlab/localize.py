"""Threshold, segment, classify and centroid isolated scatterer echoes.

Each frame is thresholded, split into connected patches and every patch is
classified by size, solidity and eccentricity. Patches that look like
several overlapping echoes are re-thresholded at a higher level until they
split into single-echo patches or the iteration cap is reached. Single
patches are reduced to their intensity-weighted centroid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from multiprocessing.pool import ThreadPool

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .geometry import VoxelGrid

log = logging.getLogger(__name__)

# default single-echo size bounds (voxels) by dimensionality
DEFAULT_SIZE_RANGE = {1: (2, 50), 2: (2, 150), 3: (4, 1000)}

SINGLE, MULTI, NOISE = "single", "multi", "noise"


@dataclass(frozen=True)
class DetectParams:
    """Localization settings.

    ``threshold`` is a fraction of the frame maximum (``mode='frame'``), of a
    reference level such as the stack maximum (``mode='stack'``), or an
    absolute intensity (``mode='absolute'``). ``connectivity`` follows
    :func:`scipy.ndimage.generate_binary_structure`; ``None`` means full
    connectivity (8 in 2D, 26 in 3D).
    """

    threshold: float = 0.2
    mode: str = "frame"
    connectivity: int | None = None
    size_range: tuple[int, int] | None = None
    min_solidity: float = 0.7
    max_eccentricity: float = 0.99
    step: float = 1.2
    max_iterations: int = 8

    def __post_init__(self):
        if self.mode not in ("frame", "stack", "absolute"):
            raise ValueError(f"unknown threshold mode {self.mode!r}")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if not self.step > 1:
            raise ValueError("re-threshold step must exceed 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")

    def sizes(self, ndim: int) -> tuple[int, int]:
        return self.size_range or DEFAULT_SIZE_RANGE[ndim]


@dataclass(frozen=True, eq=False)
class Patch:
    indices: np.ndarray  # (n, ndim) integer voxel coordinates
    values: np.ndarray

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def peak(self) -> float:
        return float(self.values.max())

    def centroid(self) -> np.ndarray:
        w = self.values.astype(float)
        return (w[:, None] * self.indices).sum(axis=0) / w.sum()

    def solidity(self) -> float:
        return solidity(self.indices)

    def eccentricity(self) -> float:
        return eccentricity(self.indices)


def solidity(indices: np.ndarray) -> float:
    """Voxel count over the number of grid points inside the convex hull."""
    pts = np.asarray(indices, dtype=float)
    n, ndim = pts.shape
    if n <= ndim or np.linalg.matrix_rank(pts - pts.mean(axis=0)) < ndim:
        return 1.0  # flat patches: the hull holds no grid points beyond the members
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return 1.0
    lo = pts.min(axis=0).astype(int)
    hi = pts.max(axis=0).astype(int)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ndim).astype(float)
    inside = np.all(grid @ hull.equations[:, :-1].T + hull.equations[:, -1] <= 1e-9, axis=1)
    return n / max(int(inside.sum()), n)


def eccentricity(indices: np.ndarray) -> float:
    """``sqrt(1 - smallest/largest)`` of the patch's second-moment eigenvalues.

    Moments are those of the union of unit voxel cells (point covariance
    plus 1/12 per axis), so a one-voxel-thick patch has a finite minor
    axis. 0 means isotropic.
    """
    pts = np.asarray(indices, dtype=float)
    if pts.shape[1] < 2:
        return 0.0
    cov = np.cov(pts, rowvar=False, bias=True) if len(pts) > 1 else np.zeros((pts.shape[1],) * 2)
    ev = np.linalg.eigvalsh(cov + np.eye(pts.shape[1]) / 12.0)
    if ev[-1] <= 0:
        return 0.0
    return float(np.sqrt(max(0.0, 1.0 - ev[0] / ev[-1])))


def classify(patch: Patch, params: DetectParams) -> str:
    ndim = patch.indices.shape[1]
    lo, hi = params.sizes(ndim)
    if patch.size < lo:
        return NOISE
    if patch.size > hi:
        return MULTI
    if ndim > 1 and (patch.solidity() < params.min_solidity or patch.eccentricity() > params.max_eccentricity):
        return MULTI
    return SINGLE


def _patches(frame: np.ndarray, mask: np.ndarray, structure) -> list[Patch]:
    labels, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return []
    out = []
    for sl, lab in zip(ndimage.find_objects(labels), range(1, n + 1)):
        sub = labels[sl] == lab
        idx = np.argwhere(sub) + np.array([s.start for s in sl])
        out.append(Patch(idx, frame[sl][sub]))
    return out


@dataclass
class FrameResult:
    positions: np.ndarray  # (n, ndim) voxel coordinates
    peaks: np.ndarray
    discarded_multi: int = 0
    discarded_noise: int = 0


def resolve_threshold(frame: np.ndarray, params: DetectParams, reference: float | None = None) -> float:
    if params.mode == "absolute":
        return params.threshold
    if params.mode == "stack":
        if reference is None:
            raise ValueError("stack threshold mode needs a reference level")
        return params.threshold * reference
    return params.threshold * float(frame.max()) if frame.size else 0.0


def detect(frame, params: DetectParams = DetectParams(), reference: float | None = None) -> FrameResult:
    """Centroids (voxel-index units) of single-echo patches in one frame.

    Works on 1D, 2D and 3D arrays. A multi-echo patch is re-thresholded at
    ``step`` times its current threshold, looking only at its own voxels;
    patches still multi after ``max_iterations`` rounds are dropped and
    counted in ``discarded_multi``.
    """
    frame = np.asarray(frame)
    ndim = frame.ndim
    structure = ndimage.generate_binary_structure(ndim, params.connectivity or ndim)
    thr = resolve_threshold(frame, params, reference)
    if not thr > 0 or not frame.size:
        return FrameResult(np.zeros((0, ndim)), np.zeros(0))

    positions, peaks = [], []
    n_multi = n_noise = 0
    pending = [(p, thr, 0) for p in _patches(frame, frame > thr, structure)]
    while pending:
        patch, level, it = pending.pop()
        kind = classify(patch, params)
        if kind == SINGLE:
            positions.append(patch.centroid())
            peaks.append(patch.peak)
        elif kind == NOISE:
            n_noise += 1
        elif it >= params.max_iterations:
            n_multi += 1
        else:
            new_level = level * params.step
            lo = patch.indices.min(axis=0)
            shape = patch.indices.max(axis=0) - lo + 1
            local = np.zeros(shape, dtype=frame.dtype)
            local[tuple((patch.indices - lo).T)] = patch.values
            for sub in _patches(local, local > new_level, structure):
                pending.append((Patch(sub.indices + lo, sub.values), new_level, it + 1))

    if not positions:
        return FrameResult(np.zeros((0, ndim)), np.zeros(0), n_multi, n_noise)
    order = np.lexsort(np.asarray(positions).T[::-1])
    return FrameResult(np.asarray(positions)[order], np.asarray(peaks)[order], n_multi, n_noise)


@dataclass(eq=False)
class LocalizationSet:
    """Centroids per frame in meters, with peak intensities."""

    positions: list[np.ndarray]
    peaks: list[np.ndarray]
    grid: VoxelGrid
    discarded_multi: int = 0
    discarded_noise: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.positions)

    @property
    def total(self) -> int:
        return int(sum(len(p) for p in self.positions))

    def per_frame(self):
        return list(zip(self.positions, self.peaks))


def localize_stack(frames, grid: VoxelGrid, params: DetectParams = DetectParams(), workers: int = 1) -> LocalizationSet:
    """Run :func:`detect` on every frame of a stack shaped (n_frames, nx, ny, nz).

    Planar grids (ny = 1) are processed as 2D images. In ``stack`` mode the
    reference level is the maximum over the whole stack.
    """
    if not isinstance(frames, np.ndarray):
        frames = np.asarray(frames)
    planar = grid.counts[1] == 1
    reference = float(frames.max()) if params.mode == "stack" and len(frames) else None

    def work(i):
        f = np.asarray(frames[i], dtype=np.float32)
        img = f[:, 0, :] if planar else f
        res = detect(img, params, reference)
        idx = res.positions
        if planar:
            idx = np.column_stack([idx[:, 0], np.zeros(len(idx)), idx[:, 1]]) if len(idx) else np.zeros((0, 3))
        return res, grid.index_to_position(idx) if len(idx) else np.zeros((0, 3))

    if workers > 1:
        with ThreadPool(workers) as pool:
            results = pool.map(work, range(len(frames)))
    else:
        results = [work(i) for i in range(len(frames))]
    return LocalizationSet(
        [pos for _, pos in results],
        [res.peaks for res, _ in results],
        grid,
        sum(r.discarded_multi for r, _ in results),
        sum(r.discarded_noise for r, _ in results),
    )


@dataclass(eq=False)
class DensityMap:
    grid: VoxelGrid
    counts: np.ndarray
    discarded: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accumulate(positions, map_grid: VoxelGrid) -> DensityMap:
    """Count centroids per cell of ``map_grid``; centroids outside it are tallied as discarded.

    ``positions`` is an (n, 3) array or a sequence of per-frame arrays. A
    planar map (ny = 1) ignores y, which projects 3D localizations.
    """
    if isinstance(positions, LocalizationSet):
        positions = positions.positions
    if isinstance(positions, np.ndarray) and positions.ndim == 2:
        pts = positions
    else:
        parts = [np.asarray(p, dtype=float).reshape(-1, 3) for p in positions]
        pts = np.concatenate(parts) if parts else np.zeros((0, 3))
    counts = np.zeros(map_grid.counts, dtype=np.int64)
    if len(pts) == 0:
        return DensityMap(map_grid, counts, 0)
    idx = np.rint(map_grid.position_to_index(pts)).astype(np.int64)
    planar = np.array(map_grid.counts) == 1
    idx[:, planar] = 0
    ok = np.all((idx >= 0) & (idx < np.array(map_grid.counts)), axis=1)
    np.add.at(counts, tuple(idx[ok].T), 1)
    discarded = int((~ok).sum())
    if discarded:
        log.info("%d centroids fell outside the density map grid", discarded)
    return DensityMap(map_grid, counts, discarded)


def render(dmap: DensityMap, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-smoothed density with reflective borders; ``sigma`` in cells, 0 is identity."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    counts = dmap.counts.astype(float)
    if sigma == 0:
        return counts
    sig = [0.0 if n == 1 else sigma for n in counts.shape]
    return ndimage.gaussian_filter(counts, sig, mode="reflect")
