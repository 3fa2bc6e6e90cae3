"""Delay-and-sum image formation for the 3D, VIP, EF and CS schemes.

Envelope detection is folded into the sum: every channel is converted to
its analytic signal before delaying, so the magnitude of the complex sum is
the envelope of the summed RF. Because the Hilbert transform commutes with
delays and sums, this matches detecting the envelope along depth after
summation, without requiring the voxel grid to resolve the carrier.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.signal.windows import tukey

from . import _das
from .forward import FULL_LAYOUT, RFFrame, reduce_channels
from .geometry import SOUND_SPEED, ArrayGeometry, ChannelMap, ImagingScheme, Scheme, VoxelGrid, channel_map
from .io import RFArchive, StackWriter, read_stack_file
from .waveform import analytic_signal


@dataclass(eq=False)
class BeamformedStack:
    grid: VoxelGrid
    frames: np.ndarray  # (n_frames, nx, ny, nz), envelope values
    scheme: ImagingScheme
    provenance: bytes = b""
    cost: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def value_count(self) -> int:
        return int(self.frames.size)

    @classmethod
    def load(cls, path) -> "BeamformedStack":
        grid, frames, tag, focus, prov = read_stack_file(path)
        return cls(grid, frames, ImagingScheme.parse(tag, focus or 2.0e-2), prov)


def lateral_weights(cmap: ChannelMap, n_cols: int, apodization: str = "tukey", alpha: float = 0.5) -> np.ndarray:
    """Receive apodization per output channel, a window over the lateral column."""
    if apodization == "none":
        return np.ones(cmap.n_channels)
    if apodization != "tukey":
        raise ValueError(f"unknown apodization {apodization!r}")
    return tukey(n_cols, alpha)[cmap.lateral_index]


def _check_layout(rf: RFFrame, scheme: ImagingScheme, cmap: ChannelMap):
    expected = FULL_LAYOUT if scheme.kind in (Scheme.THREE_D, Scheme.CS) else scheme.name
    if rf.layout != expected or rf.n_channels != cmap.n_channels:
        raise ValueError(
            f"{scheme.name} beamforming expects {cmap.n_channels} channels with layout {expected!r}, "
            f"got {rf.n_channels} with layout {rf.layout!r}"
        )


def das(
    rf: RFFrame,
    geom: ArrayGeometry,
    grid: VoxelGrid,
    scheme: ImagingScheme,
    *,
    apodization: str = "tukey",
    alpha: float = 0.5,
    c: float = SOUND_SPEED,
    upsample: int = 8,
    cmap: ChannelMap | None = None,
) -> np.ndarray:
    """Beamform one frame to envelope values shaped ``grid.counts``.

    ``rf`` must already carry the scheme's channel layout: the full aperture
    for 3D and CS, the reduced 32 columns for VIP and EF (see
    :func:`ulmlab.forward.reduce_channels`). Reduced channels sit at
    ``(x_col, 0, 0)``. Delays use a plane-wave transmit time ``z / c``.
    Samples falling outside the record contribute zero.
    """
    cmap = cmap or channel_map(scheme, geom, c)
    _check_layout(rf, scheme, cmap)
    if scheme.kind in (Scheme.VIP, Scheme.EF) and grid.counts[1] != 1:
        raise ValueError(f"{scheme.name} images a single plane; pass a grid with ny = 1")
    w = lateral_weights(cmap, geom.n_cols, apodization, alpha).astype(np.float32)

    z = analytic_signal(rf.data, upsample=upsample, pad=32)
    sig = np.zeros((z.shape[0], 2, z.shape[1] + 2), np.float32)
    sig[:, 0, 1:-1] = z.real
    sig[:, 1, 1:-1] = z.imag
    fs_up = rf.fs * upsample
    xs, ys, zs = (a.astype(np.float32) for a in grid.axes)
    pos = cmap.positions.astype(np.float32)
    out = np.empty(grid.counts, np.float32)
    _das.das_kernel(
        sig,
        np.ascontiguousarray(pos[:, 0]),
        np.ascontiguousarray(pos[:, 1]),
        np.ascontiguousarray(pos[:, 2]),
        w,
        xs,
        ys,
        zs,
        np.float32(fs_up / c),
        np.float32((rf.pulse_center - rf.t0) * fs_up),
        out,
    )
    return out


def central_slice(vol: np.ndarray, grid: VoxelGrid | None = None) -> np.ndarray:
    """The y = 0 plane, shape (nx, nz), of a volume shaped (nx, ny, nz)."""
    vol = np.asarray(vol)
    ny = vol.shape[1]
    if ny % 2 == 0:
        raise ValueError(f"volume has an even number of y samples ({ny}); use an odd ny so y = 0 is on the grid")
    k = grid.center_y_index() if grid is not None else ny // 2
    return vol[:, k, :]


def maximum_intensity_projection(vol: np.ndarray) -> np.ndarray:
    """Per-pixel maximum along y, shape (nx, nz)."""
    return np.asarray(vol).max(axis=1)


def output_grid(grid: VoxelGrid, scheme: ImagingScheme) -> VoxelGrid:
    return grid if scheme.kind is Scheme.THREE_D else grid.central_plane()


def beamform_stack(
    source: RFArchive | str | Path | Iterable[RFFrame],
    scheme: ImagingScheme,
    grid: VoxelGrid,
    geom: ArrayGeometry,
    *,
    apodization: str = "tukey",
    alpha: float = 0.5,
    c: float = SOUND_SPEED,
    upsample: int = 8,
    out_path: str | Path | None = None,
) -> BeamformedStack:
    """Beamform every frame of a full-aperture acquisition under one scheme.

    VIP and EF frames are channel-reduced first. CS is formed directly on the
    y = 0 plane of ``grid``, which gives the same values as slicing the full
    3D volume because each voxel is computed independently. With
    ``out_path`` the frames are streamed to a stack file and the returned
    stack is memory mapped from it.

    ``cost`` records channel count, values per frame, total values, bytes and
    wall-clock seconds spent beamforming (reduction included).
    """
    if isinstance(source, (str, Path)):
        source = RFArchive(source)
    cmap = channel_map(scheme, geom, c)
    ogrid = output_grid(grid, scheme)
    writer = StackWriter(out_path, ogrid, scheme.name, scheme.focal_depth, geom.digest()) if out_path else None
    frames = []
    _das.warmup()
    elapsed = 0.0
    n = 0
    try:
        for rf in source:
            t = time.perf_counter()
            if rf.layout == FULL_LAYOUT and scheme.kind in (Scheme.VIP, Scheme.EF):
                rf = reduce_channels(rf, scheme, geom, cmap, c)
            img = das(rf, geom, ogrid, scheme, apodization=apodization, alpha=alpha, c=c, upsample=upsample, cmap=cmap)
            elapsed += time.perf_counter() - t
            n += 1
            if writer:
                writer.append(img)
            else:
                frames.append(img)
    finally:
        if writer:
            writer.close()
    if writer:
        stack_frames = read_stack_file(out_path)[1]
    else:
        stack_frames = np.stack(frames) if frames else np.zeros((0, *ogrid.counts), np.float32)
    cost = {
        "scheme": scheme.name,
        "channels": cmap.n_channels,
        "frames": n,
        "values_per_frame": ogrid.size,
        "values": ogrid.size * n,
        "bytes": ogrid.size * n * 4,
        "beamform_seconds": elapsed,
    }
    return BeamformedStack(ogrid, stack_frames, scheme, geom.digest(), cost)
