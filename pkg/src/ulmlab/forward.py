"""Per-channel RF synthesis for point scatterers.

Each element is treated as a point receiver at its center. A scatterer echo
on element ``e`` is the pulse delayed by ``t_tx + |p_e - p_s| / c`` and scaled
by ``amplitude / |p_e - p_s|``. Transmission is either an unsteered plane
wave (``t_tx = z / c``) or an elevationally focused wave fired through a
fixed lens profile, in which case ``t_tx`` is the earliest lens-delayed
arrival over all elements.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .geometry import SOUND_SPEED, ArrayGeometry, ChannelMap, ImagingScheme, Scheme, VoxelGrid, channel_map, lens_delay
from .waveform import Pulse

FULL_LAYOUT = "full"


@dataclass(frozen=True)
class Scatterer:
    position: tuple[float, float, float]
    amplitude: float = 1.0


@dataclass(frozen=True, eq=False)
class RFFrame:
    """Echo traces of one transmit event, ``data`` shaped (channels, samples)."""

    data: np.ndarray
    fs: float
    t0: float
    pulse_center: float
    layout: str = FULL_LAYOUT
    tx_focus: float | None = None
    geometry_digest: bytes = b""

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.fs


def _as_positions(scatterers) -> tuple[np.ndarray, np.ndarray]:
    if len(scatterers) and isinstance(scatterers[0], Scatterer):
        pos = np.array([s.position for s in scatterers], dtype=float)
        amp = np.array([s.amplitude for s in scatterers], dtype=float)
        return pos, amp
    pos = np.atleast_2d(np.asarray(scatterers, dtype=float))
    return pos, np.ones(pos.shape[0])


def transmit_times(positions: np.ndarray, geom: ArrayGeometry, tx_focus: float | None, c: float = SOUND_SPEED) -> np.ndarray:
    """Time at which the transmitted wave reaches each scatterer."""
    positions = np.atleast_2d(positions)
    if tx_focus is None:
        return positions[:, 2] / c
    fire = -lens_delay(geom.element_positions[:, 1], tx_focus, c)
    d = np.linalg.norm(positions[:, None, :] - geom.element_positions[None, :, :], axis=2)
    return np.min(fire[None, :] + d / c, axis=1)


def acquisition_window(
    geom: ArrayGeometry,
    grid: VoxelGrid,
    pulse: Pulse,
    c: float = SOUND_SPEED,
    tx_focus: float | None = None,
    margin: int = 8,
) -> tuple[float, int]:
    """``(t0, n_samples)`` covering every voxel's round trip plus the pulse."""
    xs, ys, zs = grid.axes
    el = geom.element_positions
    z_lo, z_hi = zs[0], zs[-1]
    lead = 0.0 if tx_focus is None else float(lens_delay(np.abs(el[:, 1]).max(), tx_focus, c))
    t_first = 2 * max(z_lo, 0.0) / c - lead
    far = np.array(
        [
            np.max(np.abs(el[:, 0][:, None] - xs[[0, -1]][None, :])),
            np.max(np.abs(el[:, 1][:, None] - ys[[0, -1]][None, :])),
            z_hi,
        ]
    )
    t_last = (z_hi + np.linalg.norm(far)) / c + lead + pulse.duration
    t0 = t_first - margin / pulse.sampling_frequency
    n = int(np.ceil((t_last - t0) * pulse.sampling_frequency)) + margin
    return t0, n


def simulate_frame(
    scatterers,
    geom: ArrayGeometry,
    pulse: Pulse,
    tx_focus: float | None = None,
    *,
    c: float = SOUND_SPEED,
    window: tuple[float, int] | None = None,
    oversample: int = 16,
    obliquity: bool = False,
) -> RFFrame:
    """Synthesize full-aperture RF for one transmit.

    ``scatterers`` is a list of :class:`Scatterer` or an (n, 3) position
    array (unit amplitudes). ``tx_focus`` selects an elevationally focused
    transmit at that depth; ``None`` is a plane wave. ``window`` fixes
    ``(t0, n_samples)``; by default the record spans the echoes present.
    Fractional delays use linear interpolation into a pulse template
    ``oversample`` times finer than the sampling grid.
    """
    pos, amp = _as_positions(scatterers)
    if pos.shape[0] == 0:
        raise ValueError("simulate_frame needs at least one scatterer")
    if np.any(pos[:, 2] <= 0):
        raise ValueError("scatterers must lie in front of the aperture (z > 0)")

    fs = pulse.sampling_frequency
    el = geom.element_positions
    template, dt = pulse.template(oversample)
    t_template = np.arange(template.size) * dt
    span = int(np.ceil(t_template[-1] * fs)) + 1

    t_tx = transmit_times(pos, geom, tx_focus, c)
    dist = np.linalg.norm(el[None, :, :] - pos[:, None, :], axis=2)  # (n_scat, n_el)
    arrival = t_tx[:, None] + dist / c

    if window is None:
        t0 = np.floor(arrival.min() * fs) / fs - 4 / fs
        n = int(np.ceil((arrival.max() - t0) * fs)) + span + 4
    else:
        t0, n = window
    data = np.zeros((geom.n_elements, n))
    rows = np.arange(geom.n_elements)[:, None]
    j = np.arange(span + 1)[None, :]

    for s in range(pos.shape[0]):
        if amp[s] == 0:
            continue
        gain = amp[s] / dist[s]
        if obliquity:
            gain = gain * pos[s, 2] / dist[s]
        u = (arrival[s] - t0) * fs
        k = np.floor(u).astype(np.int64)[:, None] + j
        lag = (k - u[:, None]) / fs
        vals = np.interp(lag, t_template, template, left=0.0, right=0.0) * gain[:, None]
        ok = (k >= 0) & (k < n)
        rr = np.broadcast_to(rows, k.shape)
        data[rr[ok], k[ok]] += vals[ok]

    return RFFrame(data, fs, float(t0), pulse.center_time, FULL_LAYOUT, tx_focus, geom.digest())


def add_noise(rf: RFFrame, snr_db: float, seed) -> RFFrame:
    """Add white Gaussian noise at ``snr_db`` relative to the in-support signal power.

    Signal power is the mean square over samples whose magnitude exceeds
    1e-3 of the frame peak. ``snr_db = inf`` returns the frame unchanged.
    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    if np.isinf(snr_db) and snr_db > 0:
        return replace(rf, data=rf.data.copy())
    x = rf.data
    peak = np.abs(x).max()
    if not peak > 0:
        raise ValueError("cannot set an SNR on an all-zero frame")
    support = np.abs(x) > 1e-3 * peak
    p_signal = np.mean(x[support].astype(float) ** 2)
    p_noise = p_signal / 10 ** (snr_db / 10)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(x.shape) * np.sqrt(p_noise)
    return replace(rf, data=(x + noise).astype(x.dtype, copy=False))


def _shift_traces(data: np.ndarray, advance: np.ndarray, fs: float) -> np.ndarray:
    """``out[e, k] = data[e](t_k + advance[e])`` with linear interpolation, zero outside."""
    n = data.shape[1]
    pos = np.arange(n)[None, :] + advance[:, None] * fs
    i0 = np.floor(pos).astype(np.int64)
    f = pos - i0
    padded = np.concatenate([data, np.zeros((data.shape[0], 2), dtype=data.dtype)], axis=1)
    lo = np.where((i0 >= 0) & (i0 < n), i0, n)
    hi = np.where((i0 + 1 >= 0) & (i0 + 1 < n), i0 + 1, n)
    rows = np.arange(data.shape[0])[:, None]
    return padded[rows, lo] * (1 - f) + padded[rows, hi] * f


def reduce_channels(
    rf: RFFrame,
    scheme: ImagingScheme,
    geom: ArrayGeometry,
    cmap: ChannelMap | None = None,
    c: float = SOUND_SPEED,
) -> RFFrame:
    """Collapse full-aperture RF to the channels recorded by ``scheme``.

    VIP sums each elevational column; EF first advances every trace by its
    lens delay, then sums. 3D and CS keep all channels.
    """
    if rf.layout != FULL_LAYOUT or rf.n_channels != geom.n_elements:
        raise ValueError(
            f"reduce_channels needs a full {geom.n_elements}-channel frame, got layout "
            f"{rf.layout!r} with {rf.n_channels} channels"
        )
    if scheme.kind in (Scheme.THREE_D, Scheme.CS):
        return rf
    cmap = cmap or channel_map(scheme, geom, c)
    data = rf.data
    if scheme.kind is Scheme.EF:
        data = _shift_traces(data, cmap.element_delays, rf.fs)
    out = np.stack([data[g].sum(axis=0) for g in cmap.groups])
    return replace(rf, data=out.astype(rf.data.dtype, copy=False), layout=scheme.name)


def superpose(frames: Sequence[RFFrame]) -> RFFrame:
    """Sample-wise sum of frames sharing layout and time axis."""
    first = frames[0]
    for f in frames[1:]:
        if f.data.shape != first.data.shape or f.t0 != first.t0 or f.fs != first.fs:
            raise ValueError("frames do not share a time axis")
    return replace(first, data=np.sum([f.data for f in frames], axis=0))
