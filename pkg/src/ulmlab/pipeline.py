"""Config-driven orchestration of the full localization experiment.

Every stage reads its inputs from and writes its outputs to one artifact
directory, so stages can be run one at a time or chained by :func:`run`.
Artifacts depend only on the configuration and its seeds; wall-clock
timings are confined to ``manifest.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from pathlib import Path

import numba
import numpy as np

from .beamform import BeamformedStack, beamform_stack, maximum_intensity_projection
from .config import ExperimentConfig
from .forward import acquisition_window, add_noise, simulate_frame
from .geometry import ImagingScheme, Scheme, build_array
from .io import (
    RFArchive,
    RFArchiveWriter,
    export_image,
    read_ground_truth,
    read_localizations,
    write_ground_truth,
    write_localizations,
    write_stack_file,
)
from .localize import DensityMap, accumulate, localize_stack, render
from .metrics import (
    MetricsRow,
    elevational_sensitivity,
    error_stats,
    format_table,
    match_frames,
    radial_profile,
    ring_crossings,
    write_metrics_csv,
)
from .phantom import cross_tube_phantom, single_scatter_sweep
from .svdfilter import auto_threshold, from_casorati, svd_filter, to_casorati
from .waveform import make_pulse

log = logging.getLogger(__name__)

STAGES = ("phantom", "simulate", "beamform", "svd", "localize", "metrics")
MANIFEST = "manifest.json"
FAILED = "FAILED"
CONFIG_SNAPSHOT = "config.ini"
GROUND_TRUTH = "ground_truth.csv"

# noise stream tags keep the two transmit archives statistically independent
_TX_TAGS = {"plane": 0, "ef": 1}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


def rf_name(tx: str) -> str:
    return f"rf_{tx}.bin"


def stack_name(scheme: str, filtered: bool = False) -> str:
    return f"stack_{scheme}{'_svd' if filtered else ''}.bin"


def transmit_of(scheme: ImagingScheme) -> str:
    """RF archive a scheme is formed from: EF needs its own focused transmit."""
    return "ef" if scheme.kind is Scheme.EF else "plane"


@dataclass
class Experiment:
    """A configuration bound to an artifact directory."""

    config: ExperimentConfig
    out: Path
    workers: int = 1
    timings: dict = field(default_factory=dict)
    costs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.out = Path(self.out)
        self.geom = build_array(self.config.array.to_array_config())
        p = self.config.pulse
        self.pulse = make_pulse(p.center_frequency, p.cycles, p.sampling_frequency)
        self.c = p.sound_speed
        self.grid = self.config.grid.grid()
        self.schemes = self.config.schemes()

    def path(self, name: str) -> Path:
        return self.out / name

    def cost(self, scheme: str) -> dict:
        return self.costs.setdefault(scheme, {})

    def transmits(self) -> list[str]:
        return sorted({transmit_of(s) for s in self.schemes}, key=list(_TX_TAGS).index)

    def truth(self):
        return read_ground_truth(self.path(GROUND_TRUTH))

    def stack_path(self, scheme: ImagingScheme) -> Path:
        filtered = self.config.svd.mode != "off"
        return self.path(stack_name(scheme.name, filtered))


# --- stages ---------------------------------------------------------------------


def stage_phantom(exp: Experiment):
    ph = exp.config.phantom
    if ph.kind == "sweep":
        seq = single_scatter_sweep(ph.sweep_x, ph.sweep_z, (ph.sweep_y_min, ph.sweep_y_max), ph.sweep_step)
    else:
        seq = cross_tube_phantom(ph.n_tubes, ph.concentration, ph.total_per_tube, ph.seed, ph.layout())
    write_ground_truth(exp.path(GROUND_TRUTH), seq.frames, seq.tube_ids)
    log.info("phantom: %d frames, %d scatterers", seq.n_frames, sum(len(f) for f in seq.frames))


def stage_simulate(exp: Experiment):
    frames, _ = exp.truth()
    noise = exp.config.noise
    for tx in exp.transmits():
        focus = exp.config.beamform.focal_depth if tx == "ef" else None
        window = acquisition_window(exp.geom, exp.grid, exp.pulse, exp.c, focus)
        tag = _TX_TAGS[tx]

        def one(i, focus=focus, window=window, tag=tag):
            rf = simulate_frame(frames[i], exp.geom, exp.pulse, focus, c=exp.c, window=window)
            return add_noise(rf, noise.snr_db, np.random.SeedSequence([noise.seed, tag, i]))

        writer = None
        try:
            with ThreadPool(exp.workers) as pool:
                for rf in pool.imap(one, range(len(frames))):
                    if writer is None:
                        writer = RFArchiveWriter.like(exp.path(rf_name(tx)), rf)
                    writer.append(rf)
        finally:
            if writer is not None:
                writer.close()
        log.info("simulate: %s archive with %d frames", tx, len(frames))


def stage_beamform(exp: Experiment):
    bf = exp.config.beamform
    for scheme in exp.schemes:
        archive = RFArchive(exp.path(rf_name(transmit_of(scheme))))
        stack = beamform_stack(
            archive,
            scheme,
            exp.grid,
            exp.geom,
            apodization=bf.apodization,
            alpha=bf.alpha,
            c=exp.c,
            upsample=bf.upsample,
            out_path=exp.path(stack_name(scheme.name)),
        )
        exp.cost(scheme.name).update(stack.cost)
        log.info("beamform: %s, %d frames in %.1f s", scheme.name, stack.n_frames, stack.cost["beamform_seconds"])


def stage_svd(exp: Experiment):
    svd = exp.config.svd
    if svd.mode == "off":
        return
    for scheme in exp.schemes:
        stack = BeamformedStack.load(exp.path(stack_name(scheme.name)))
        t = time.perf_counter()
        m = to_casorati(stack.frames)
        low = svd.low_cut if svd.mode == "manual" else auto_threshold(m, svd.corr_threshold)
        filtered = from_casorati(svd_filter(m, low, svd.high_cut))
        elapsed = time.perf_counter() - t
        # the filter can leave signed values; localization works on magnitudes
        write_stack_file(
            exp.path(stack_name(scheme.name, True)),
            stack.grid,
            np.abs(filtered).astype(np.float32),
            scheme.name,
            scheme.focal_depth,
            stack.provenance,
        )
        exp.cost(scheme.name).update({"svd_low_cut": int(low), "svd_seconds": elapsed})
        log.info("svd: %s, removed %d components", scheme.name, low)


def map_grid(exp: Experiment, scheme: ImagingScheme):
    return exp.grid if scheme.kind is Scheme.THREE_D else exp.grid.central_plane()


def project(dmap: DensityMap, sigma: float) -> np.ndarray:
    """Rendered density as an (x, z) image; volumes are reduced by maximum intensity projection."""
    img = render(dmap, sigma)
    return maximum_intensity_projection(img) if img.shape[1] > 1 else img[:, 0, :]


def stage_localize(exp: Experiment):
    for scheme in exp.schemes:
        stack = BeamformedStack.load(exp.stack_path(scheme))
        ndim = 2 if stack.grid.counts[1] == 1 else 3
        t = time.perf_counter()
        locs = localize_stack(stack.frames, stack.grid, exp.config.localize.params(ndim), exp.workers)
        elapsed = time.perf_counter() - t
        write_localizations(exp.path(f"localizations_{scheme.name}.csv"), locs.per_frame(), ndim == 2)
        dmap = accumulate(locs, map_grid(exp, scheme))
        export_image(project(dmap, exp.config.localize.render_sigma).T, exp.path(f"density_{scheme.name}.pgm"))
        _write_counts(exp.path(f"density_{scheme.name}.csv"), dmap.counts)
        exp.cost(scheme.name).update(
            {
                "localize_seconds": elapsed,
                "localizations": locs.total,
                "discarded_multi": locs.discarded_multi,
                "discarded_noise": locs.discarded_noise,
            }
        )
        log.info("localize: %s, %d centroids", scheme.name, locs.total)


def _write_counts(path, counts: np.ndarray):
    """Sparse CSV ``ix, iy, iz, count`` of the non-empty density cells."""
    idx = np.argwhere(counts > 0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ix", "iy", "iz", "count"])
        for i in idx:
            w.writerow([*map(int, i), int(counts[tuple(i)])])


def read_counts(path, shape) -> np.ndarray:
    counts = np.zeros(shape, dtype=np.int64)
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.int64)
    if rows.size:
        counts[tuple(rows[:, :3].T)] = rows[:, 3]
    return counts


def load_detections(exp: Experiment, scheme: ImagingScheme, n_frames: int) -> list[np.ndarray]:
    return [pos for pos, _ in read_localizations(exp.path(f"localizations_{scheme.name}.csv"), n_frames)]


def stage_metrics(exp: Experiment):
    truth, _ = exp.truth()
    cfg = exp.config
    lam = cfg.pulse.wavelength
    rows = []
    dets = {}
    for scheme in exp.schemes:
        det = load_detections(exp, scheme, len(truth))
        dets[scheme.name] = det
        m = match_frames(det, truth, cfg.metrics.tolerance_wavelengths * lam, planar=scheme.kind.is_planar)
        label = "sweep" if cfg.phantom.kind == "sweep" else f"{cfg.phantom.n_tubes}-tube"
        rows.append(MetricsRow(label, cfg.phantom.concentration, scheme.name, len(truth), m.tp, m.fp, m.fn))
    write_metrics_csv(rows, exp.path("metrics.csv"))
    exp.path("metrics.txt").write_text(format_table(rows))

    if cfg.phantom.kind == "sweep":
        _sweep_reports(exp, truth, dets)
    else:
        _profile_report(exp)


def _sweep_reports(exp: Experiment, truth, dets):
    lam = exp.config.pulse.wavelength
    ys = np.array([f[0, 1] for f in truth], dtype=float)
    peaks = {s.name: BeamformedStack.load(exp.stack_path(s)).frames for s in exp.schemes}
    sens = elevational_sensitivity(peaks, ys)
    with open(exp.path("sensitivity.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "y", *sens])
        for i, y in enumerate(ys):
            w.writerow([i, f"{y:.9g}", *(f"{sens[s][i]:.6g}" for s in sens)])
    gate = exp.config.metrics.error_gate_wavelengths * lam
    for scheme in exp.schemes:
        m = match_frames(dets[scheme.name], truth, gate, planar=scheme.kind.is_planar)
        st = error_stats(m, lam)
        with open(exp.path(f"errors_{scheme.name}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame_index", "y", "err_x", "err_y", "err_z"])
            if st is not None:
                for fi, t, e in zip(st.frame_index, st.truth, st.errors):
                    w.writerow([int(fi), f"{t[1]:.9g}", *(f"{v:.6g}" for v in e)])


def density_image(exp: Experiment, scheme: ImagingScheme) -> np.ndarray:
    """Rendered (x, z) density image rebuilt from the stored counts."""
    grid = map_grid(exp, scheme)
    counts = read_counts(exp.path(f"density_{scheme.name}.csv"), grid.counts)
    return project(DensityMap(grid, counts), exp.config.localize.render_sigma)


def _profile_report(exp: Experiment):
    cfg = exp.config
    center = (0.0, cfg.phantom.crossing_depth)
    tubes = cfg.phantom.layout().tubes()
    with open(exp.path("profiles.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "radius", "angle_deg", "value"])
        for scheme in exp.schemes:
            img = density_image(exp, scheme)
            for r in cfg.metrics.ring_radii:
                try:
                    ang, vals = radial_profile(
                        img, exp.grid, center, r, cfg.metrics.angular_step_deg, cfg.metrics.radial_window
                    )
                except ValueError:
                    log.warning("ring of radius %g m does not fit the grid; skipped", r)
                    continue
                for a, v in zip(ang, vals):
                    w.writerow([scheme.name, f"{r:.9g}", f"{a:.6g}", f"{v:.6g}"])
    with open(exp.path("ring_crossings.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radius", "angle_deg", "y"])
        for r in cfg.metrics.ring_radii:
            for a, y in ring_crossings(tubes, (0.0, 0.0, cfg.phantom.crossing_depth), r):
                w.writerow([f"{r:.9g}", f"{a:.6g}", f"{y:.9g}"])


STAGE_FUNCS = {
    "phantom": stage_phantom,
    "simulate": stage_simulate,
    "beamform": stage_beamform,
    "svd": stage_svd,
    "localize": stage_localize,
    "metrics": stage_metrics,
}


# --- provenance -----------------------------------------------------------------


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def artifact_hashes(out) -> dict:
    """sha256 of every file below ``out`` except the manifest itself."""
    out = Path(out)
    return {
        p.relative_to(out).as_posix(): sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != MANIFEST
    }


def read_manifest(out) -> dict:
    path = Path(out) / MANIFEST
    return json.loads(path.read_text()) if path.exists() else {}


def write_manifest(exp: Experiment):
    prev = read_manifest(exp.out)
    timings = {**prev.get("timings", {}), **exp.timings}
    costs = prev.get("costs", {})
    for scheme, c in exp.costs.items():
        costs[scheme] = {**costs.get(scheme, {}), **c}
    manifest = {
        "name": exp.config.experiment.name,
        "config": exp.config.to_text(),
        "workers": exp.workers,
        "timings": timings,
        "costs": costs,
        "files": artifact_hashes(exp.out),
    }
    exp.path(MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _set_threads(workers: int):
    numba.set_num_threads(max(1, min(workers, numba.config.NUMBA_NUM_THREADS)))


def run(config: ExperimentConfig, out=None, workers: int = 1, stages=None) -> Path:
    """Execute ``stages`` (default: all) and refresh the manifest.

    A failing stage leaves a ``FAILED`` marker naming it, keeps whatever
    was written so far and raises :class:`StageError`.
    """
    out = Path(out if out is not None else config.experiment.output)
    out.mkdir(parents=True, exist_ok=True)
    stages = list(STAGES if stages is None else stages)
    unknown = [s for s in stages if s not in STAGE_FUNCS]
    if unknown:
        raise ValueError(f"unknown stages {unknown}")
    exp = Experiment(config, out, max(1, int(workers)))
    marker = exp.path(FAILED)
    if marker.exists():
        marker.unlink()
    config.save(exp.path(CONFIG_SNAPSHOT))
    _set_threads(exp.workers)
    for stage in stages:
        t = time.perf_counter()
        try:
            STAGE_FUNCS[stage](exp)
        except Exception as exc:
            marker.write_text(f"{stage}\n{type(exc).__name__}: {exc}\n")
            write_manifest(exp)
            raise StageError(stage, str(exc)) from exc
        exp.timings[stage] = time.perf_counter() - t
    write_manifest(exp)
    return out


# --- cost report ----------------------------------------------------------------

COST_FIELDS = (
    ("channels", "channels", "{:d}"),
    ("values_per_frame", "values/frame", "{:d}"),
    ("values", "stored values", "{:d}"),
    ("bytes", "stack bytes", "{:d}"),
    ("beamform_seconds", "beamform s", "{:.2f}"),
    ("svd_seconds", "SVD s", "{:.2f}"),
    ("localize_seconds", "localize s", "{:.2f}"),
)


def cost_table(manifest: dict) -> str:
    """Per-scheme channel, storage and timing comparison from a manifest."""
    from .metrics import SCHEME_LABELS, SCHEME_ORDER

    costs = manifest.get("costs", {})
    schemes = [s for s in SCHEME_ORDER if s in costs] + sorted(set(costs) - set(SCHEME_ORDER))
    header = f"{'':<15}" + "".join(f"{SCHEME_LABELS.get(s, s):>14}" for s in schemes)
    lines = [header, "-" * len(header)]
    for key, label, fmt in COST_FIELDS:
        cells = []
        for s in schemes:
            v = costs[s].get(key)
            cells.append(f"{'n/a' if v is None else fmt.format(v):>14}")
        lines.append(f"{label:<15}" + "".join(cells))
    return "\n".join(lines) + "\n"
