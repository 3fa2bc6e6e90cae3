"""Binary RF archives, beamformed-stack files and CSV/PGM exports.

Both binary formats are little-endian: a fixed header followed by float32
samples in frame-major order. The frame count in the header is patched when
a writer is closed, so frames can be appended one at a time.
"""

from __future__ import annotations

import csv
import logging
import struct
from pathlib import Path

import numpy as np

from .forward import RFFrame
from .geometry import VoxelGrid

log = logging.getLogger(__name__)

RF_MAGIC = b"ULMRF\x00\x00\x00"
STACK_MAGIC = b"ULMSTK\x00\x00"
FORMAT_VERSION = 1

# magic, version, channels, samples, frames, fs, t0, pulse_center, tx_focus (NaN = plane), geometry hash, tag
_RF_HEADER = struct.Struct("<8sIIIIdddd16s8s")
# magic, version, origin xyz, spacing xyz, counts xyz, frames, tag, focal depth, provenance hash
_STACK_HEADER = struct.Struct("<8sI3d3d3II8sd16s")


def _tag(text: str) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > 8:
        raise ValueError(f"tag {text!r} longer than 8 bytes")
    return raw.ljust(8, b"\x00")


def _untag(raw: bytes) -> str:
    return raw.rstrip(b"\x00").decode("ascii")


class RFArchiveWriter:
    """Append RF frames sharing one layout and time axis to an archive file."""

    def __init__(self, path, *, n_channels, n_samples, fs, t0, pulse_center, tx_focus=None, geometry_digest=b"", tag="full"):
        self.path = Path(path)
        self.n_channels = int(n_channels)
        self.n_samples = int(n_samples)
        self._meta = (fs, t0, pulse_center, np.nan if tx_focus is None else tx_focus, geometry_digest.ljust(16, b"\x00")[:16], _tag(tag))
        self.n_frames = 0
        self._fh = open(self.path, "wb")
        self._write_header()

    @classmethod
    def like(cls, path, frame: RFFrame) -> "RFArchiveWriter":
        return cls(
            path,
            n_channels=frame.n_channels,
            n_samples=frame.n_samples,
            fs=frame.fs,
            t0=frame.t0,
            pulse_center=frame.pulse_center,
            tx_focus=frame.tx_focus,
            geometry_digest=frame.geometry_digest,
            tag=frame.layout,
        )

    def _write_header(self):
        fs, t0, pc, focus, digest, tag = self._meta
        self._fh.seek(0)
        self._fh.write(
            _RF_HEADER.pack(RF_MAGIC, FORMAT_VERSION, self.n_channels, self.n_samples, self.n_frames, fs, t0, pc, focus, digest, tag)
        )

    def append(self, frame: RFFrame | np.ndarray):
        data = frame.data if isinstance(frame, RFFrame) else frame
        if data.shape != (self.n_channels, self.n_samples):
            raise ValueError(f"frame shape {data.shape} does not match archive {(self.n_channels, self.n_samples)}")
        self._fh.seek(0, 2)
        self._fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
        self.n_frames += 1

    def close(self):
        if not self._fh.closed:
            self._write_header()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RFArchive:
    """Read-only view of an RF archive; frames are memory mapped."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            head = fh.read(_RF_HEADER.size)
        if len(head) < _RF_HEADER.size:
            raise ValueError(f"{self.path} is too short for an RF archive")
        magic, version, nch, ns, nf, fs, t0, pc, focus, digest, tag = _RF_HEADER.unpack(head)
        if magic != RF_MAGIC:
            raise ValueError(f"{self.path} is not an RF archive")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported RF archive version {version}")
        self.n_channels, self.n_samples, self.n_frames = nch, ns, nf
        self.fs, self.t0, self.pulse_center = fs, t0, pc
        self.tx_focus = None if np.isnan(focus) else focus
        self.geometry_digest = digest
        self.tag = _untag(tag)
        self.data = np.memmap(self.path, dtype="<f4", mode="r", offset=_RF_HEADER.size, shape=(nf, nch, ns)) if nf else np.zeros((0, nch, ns), "<f4")

    def __len__(self):
        return self.n_frames

    def frame(self, i: int) -> RFFrame:
        return RFFrame(
            np.asarray(self.data[i], dtype=np.float32),
            self.fs,
            self.t0,
            self.pulse_center,
            self.tag,
            self.tx_focus,
            self.geometry_digest,
        )

    def __iter__(self):
        for i in range(self.n_frames):
            yield self.frame(i)


class StackWriter:
    def __init__(self, path, grid: VoxelGrid, tag: str, focal_depth: float = 0.0, provenance: bytes = b""):
        self.path = Path(path)
        self.grid = grid
        self.n_frames = 0
        self._meta = (_tag(tag), float(focal_depth), provenance.ljust(16, b"\x00")[:16])
        self._fh = open(self.path, "wb")
        self._write_header()

    def _write_header(self):
        tag, focus, prov = self._meta
        g = self.grid
        self._fh.seek(0)
        self._fh.write(_STACK_HEADER.pack(STACK_MAGIC, FORMAT_VERSION, *g.origin, *g.spacing, *g.counts, self.n_frames, tag, focus, prov))

    def append(self, frame: np.ndarray):
        if frame.shape != self.grid.counts:
            raise ValueError(f"frame shape {frame.shape} does not match grid {self.grid.counts}")
        self._fh.seek(0, 2)
        self._fh.write(np.ascontiguousarray(frame, dtype="<f4").tobytes())
        self.n_frames += 1

    def close(self):
        if not self._fh.closed:
            self._write_header()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_stack_file(path):
    """Return ``(grid, frames, tag, focal_depth, provenance)``; frames are memory mapped."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_STACK_HEADER.size)
    if len(head) < _STACK_HEADER.size:
        raise ValueError(f"{path} is too short for a stack file")
    fields = _STACK_HEADER.unpack(head)
    magic, version = fields[0], fields[1]
    if magic != STACK_MAGIC:
        raise ValueError(f"{path} is not a beamformed stack file")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported stack file version {version}")
    origin, spacing, counts = fields[2:5], fields[5:8], fields[8:11]
    nf, tag, focus, prov = fields[11], fields[12], fields[13], fields[14]
    grid = VoxelGrid(origin, spacing, counts)
    if nf:
        frames = np.memmap(path, dtype="<f4", mode="r", offset=_STACK_HEADER.size, shape=(nf, *grid.counts))
    else:
        frames = np.zeros((0, *grid.counts), "<f4")
    return grid, frames, _untag(tag), focus, prov


def write_stack_file(path, grid: VoxelGrid, frames, tag: str, focal_depth: float = 0.0, provenance: bytes = b""):
    with StackWriter(path, grid, tag, focal_depth, provenance) as w:
        for f in frames:
            w.append(f)


# --- text exports -----------------------------------------------------------


def write_ground_truth(path, frames, tube_ids):
    """CSV ``frame_index, tube_id, x, y, z`` in meters, 9 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "tube_id", "x", "y", "z"])
        for fi, (pos, tid) in enumerate(zip(frames, tube_ids)):
            for p, t in zip(pos, tid):
                w.writerow([fi, int(t), f"{p[0]:.9g}", f"{p[1]:.9g}", f"{p[2]:.9g}"])


def read_ground_truth(path, n_frames: int | None = None):
    """Inverse of :func:`write_ground_truth`; returns float32 positions per frame."""
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if n_frames is None:
        n_frames = int(rows[:, 0].max()) + 1 if rows.size else 0
    frames, tube_ids = [], []
    for fi in range(n_frames):
        sel = rows[rows[:, 0] == fi] if rows.size else np.zeros((0, 5))
        frames.append(sel[:, 2:5].astype(np.float32))
        tube_ids.append(sel[:, 1].astype(np.int64))
    return frames, tube_ids


def write_localizations(path, per_frame, planar: bool):
    """CSV ``frame_index, x, y, z, peak_intensity``; y is 0 for planar schemes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "x", "y", "z", "peak_intensity"])
        for fi, (pos, peak) in enumerate(per_frame):
            for p, a in zip(pos, peak):
                y = 0.0 if planar else p[1]
                w.writerow([fi, f"{p[0]:.9g}", f"{y:.9g}", f"{p[2]:.9g}", f"{a:.9g}"])


def read_localizations(path, n_frames: int):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = []
    for fi in range(n_frames):
        sel = rows[rows[:, 0] == fi] if rows.size else np.zeros((0, 5))
        out.append((sel[:, 1:4].copy(), sel[:, 4].copy()))
    return out


def export_image(values, path, mode: str = "linear", floor_db: float = -40.0) -> np.ndarray:
    """Write a 2D array as a 16-bit binary PGM, max-normalized.

    Rows of ``values`` become image rows. ``mode='log'`` maps
    ``[floor_db, 0]`` dB (20 log10 of the normalized amplitude) onto
    ``[0, 65535]``. Returns the written pixel array.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.size == 0:
        raise ValueError("export_image needs a non-empty 2D array")
    peak = np.abs(v).max()
    if not peak > 0:
        log.warning("exporting an all-zero image to %s", path)
        pix = np.zeros(v.shape, dtype=np.uint16)
    else:
        a = np.abs(v) / peak
        if mode == "linear":
            scaled = a
        elif mode == "log":
            with np.errstate(divide="ignore"):
                db = 20 * np.log10(a)
            scaled = np.clip((db - floor_db) / -floor_db, 0.0, 1.0)
        else:
            raise ValueError(f"unknown image mode {mode!r}")
        pix = np.round(scaled * 65535).astype(np.uint16)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n65535\n".encode("ascii"))
        fh.write(pix.astype(">u2").tobytes())
    return pix


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(np.uint16)
