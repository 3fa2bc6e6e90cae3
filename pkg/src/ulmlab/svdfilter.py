"""Spatiotemporal SVD clutter filtering on a frame stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

# singular values below this fraction of the largest are treated as zero
RANK_TOLERANCE = 1e-12


@dataclass(eq=False)
class CasoratiMatrix:
    """Stack reshaped to (n_voxels, n_frames); column j is frame j flattened in C order."""

    values: np.ndarray
    spatial_shape: tuple[int, ...]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != int(np.prod(self.spatial_shape)):
            raise ValueError(f"values of shape {self.values.shape} do not match spatial shape {self.spatial_shape}")

    @property
    def n_voxels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def to_casorati(stack) -> CasoratiMatrix:
    """Reshape a stack (``BeamformedStack`` or array shaped (frames, ...)) without copying values."""
    frames = np.asarray(getattr(stack, "frames", stack))
    if frames.ndim < 2 or frames.shape[0] < 2:
        raise ValueError("SVD filtering needs a stack of at least 2 frames")
    return CasoratiMatrix(frames.reshape(frames.shape[0], -1).T, tuple(frames.shape[1:]))


def from_casorati(m: CasoratiMatrix) -> np.ndarray:
    return m.values.T.reshape((m.n_frames, *m.spatial_shape))


def decompose(m: CasoratiMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``(U, s, Vt)`` with a deterministic sign per component.

    The largest-magnitude entry of each spatial vector ``U[:, k]`` is made
    positive; singular values below ``RANK_TOLERANCE`` times the largest are
    set to zero.
    """
    a = np.asarray(m.values, dtype=np.float64)
    u, s, vt = linalg.svd(a, full_matrices=False, lapack_driver="gesdd")
    if s.size and s[0] > 0:
        s = np.where(s < RANK_TOLERANCE * s[0], 0.0, s)
    else:
        s = np.zeros_like(s)
    idx = np.argmax(np.abs(u), axis=0)
    sign = np.sign(u[idx, np.arange(u.shape[1])])
    sign[sign == 0] = 1.0
    return u * sign, s, vt * sign[:, None]


def _check_cuts(low_cut: int, high_cut: int | None, n_max: int):
    if not 0 <= low_cut < n_max:
        raise ValueError(f"low_cut must satisfy 0 <= low_cut < {n_max}, got {low_cut}")
    if high_cut is not None and not low_cut < high_cut <= n_max:
        raise ValueError(f"high_cut must satisfy {low_cut} < high_cut <= {n_max}, got {high_cut}")


def svd_filter(m: CasoratiMatrix, low_cut: int, high_cut: int | None = None) -> CasoratiMatrix:
    """Keep singular components ``[low_cut, high_cut)``; ``high_cut=None`` keeps the tail."""
    n_max = min(m.n_voxels, m.n_frames)
    _check_cuts(low_cut, high_cut, n_max)
    u, s, vt = decompose(m)
    hi = n_max if high_cut is None else high_cut
    kept = (u[:, low_cut:hi] * s[low_cut:hi]) @ vt[low_cut:hi]
    return CasoratiMatrix(kept, m.spatial_shape)


def auto_threshold(m: CasoratiMatrix, corr_threshold: float = 0.2, max_components: int | None = None) -> int:
    """Size of the leading block of spatially coherent singular vectors.

    Components are added in order while the mean absolute correlation
    between the candidate's ``|U|`` and the ``|U|`` of every vector already
    in the block stays at or above ``corr_threshold``. Components with zero
    singular value are never included. The result lies in
    ``[0, n_frames - 1]``.
    """
    if m.n_frames < 2:
        return 0
    u, s, _ = decompose(m)
    n_nonzero = int(np.count_nonzero(s))
    limit = min(n_nonzero, m.n_frames - 1)
    if max_components is not None:
        limit = min(limit, max_components)
    if limit == 0:
        return 0
    if m.n_voxels < 2:
        return limit
    with np.errstate(invalid="ignore", divide="ignore"):
        # a flat |u| has no defined correlation; count it as uncorrelated
        corr = np.nan_to_num(np.corrcoef(np.abs(u[:, : limit + 1]), rowvar=False))
    k = 1
    while k < limit and np.mean(np.abs(corr[k, :k])) >= corr_threshold:
        k += 1
    return k
