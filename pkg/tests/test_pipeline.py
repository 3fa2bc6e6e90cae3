import dataclasses

import numpy as np
import pytest

from ulmlab import pipeline
from ulmlab.config import ExperimentConfig
from ulmlab.io import read_stack_file
from ulmlab.metrics import read_metrics_csv


@pytest.fixture(scope="module")
def cfg(small_ini_text):
    return ExperimentConfig.from_text(small_ini_text)


@pytest.fixture(scope="module")
def full_run(cfg, tmp_path_factory):
    return pipeline.run(cfg, tmp_path_factory.mktemp("a"))


def files_of(out):
    return pipeline.read_manifest(out)["files"]


def test_full_run_writes_every_artifact(full_run):
    names = set(files_of(full_run))
    for s in ("ef", "cs", "vip", "3d"):
        assert {f"stack_{s}.bin", f"localizations_{s}.csv", f"density_{s}.pgm", f"density_{s}.csv"} <= names
    assert {"rf_plane.bin", "rf_ef.bin", "ground_truth.csv", "metrics.csv", "metrics.txt", "config.ini"} <= names
    on_disk = {p.name for p in full_run.iterdir()} - {pipeline.MANIFEST}
    assert on_disk == names
    rows = read_metrics_csv(full_run / "metrics.csv")
    assert [r.scheme for r in rows] == ["ef", "cs", "vip", "3d"]
    assert all(r.tp + r.fn == 8 and r.frames == 4 for r in rows)


def test_stacks_have_scheme_shapes(full_run):
    g3, f3, *_ = read_stack_file(full_run / "stack_3d.bin")
    gv, fv, *_ = read_stack_file(full_run / "stack_vip.bin")
    assert f3.shape == (4, 31, 21, 41)
    assert fv.shape == (4, 31, 1, 41) and gv.counts[1] == 1


def test_snapshot_config_reloads(full_run, cfg):
    assert ExperimentConfig.load(full_run / pipeline.CONFIG_SNAPSHOT) == cfg


def test_rerun_is_bitwise_identical(full_run, cfg):
    before = files_of(full_run)
    pipeline.run(cfg, full_run)
    assert files_of(full_run) == before


def test_worker_count_does_not_change_outputs(full_run, cfg, tmp_path):
    pipeline.run(cfg, tmp_path, workers=2)
    assert files_of(tmp_path) == files_of(full_run)


def test_schemes_are_independent(full_run, cfg, tmp_path):
    only = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, schemes=("vip",)))
    pipeline.run(only, tmp_path)
    a, b = files_of(full_run), files_of(tmp_path)
    for name in ("stack_vip.bin", "localizations_vip.csv", "density_vip.pgm", "density_vip.csv", "ground_truth.csv"):
        assert a[name] == b[name], name
    assert "stack_3d.bin" not in b and "rf_ef.bin" not in b


def test_single_stage_rerun(full_run, cfg):
    before = files_of(full_run)
    pipeline.run(cfg, full_run, stages=["localize"])
    assert files_of(full_run) == before
    with pytest.raises(ValueError):
        pipeline.run(cfg, full_run, stages=["bogus"])


def test_missing_inputs_leave_a_failed_marker(cfg, tmp_path):
    with pytest.raises(pipeline.StageError) as err:
        pipeline.run(cfg, tmp_path, stages=["beamform"])
    assert err.value.stage == "beamform"
    assert (tmp_path / pipeline.FAILED).read_text().startswith("beamform\n")
    assert "FAILED" in files_of(tmp_path)
    # a later successful run clears the marker
    pipeline.run(cfg, tmp_path, stages=["phantom"])
    assert not (tmp_path / pipeline.FAILED).exists()


def test_cost_report(full_run):
    manifest = pipeline.read_manifest(full_run)
    costs = manifest["costs"]
    assert costs["vip"]["channels"] == costs["ef"]["channels"] == 32
    assert costs["3d"]["channels"] == costs["cs"]["channels"] == 1024
    assert costs["3d"]["values_per_frame"] == 31 * 21 * 41
    assert costs["vip"]["values_per_frame"] == 31 * 41
    assert costs["3d"]["bytes"] > costs["vip"]["bytes"]
    table = pipeline.cost_table(manifest)
    lines = table.splitlines()
    assert lines[0].split() == ["EF", "CS", "VIP", "3D"]
    assert lines[2].split() == ["channels", "32", "1024", "32", "1024"]


def test_svd_stage_writes_filtered_stacks(cfg, full_run, tmp_path):
    import shutil

    for name in ("ground_truth.csv", "stack_vip.bin"):
        shutil.copy(full_run / name, tmp_path / name)
    svd = dataclasses.replace(
        cfg,
        experiment=dataclasses.replace(cfg.experiment, schemes=("vip",)),
        svd=dataclasses.replace(cfg.svd, mode="manual", low_cut=1),
    )
    pipeline.run(svd, tmp_path, stages=["svd", "localize"])
    _, raw, *_ = read_stack_file(tmp_path / "stack_vip.bin")
    _, filt, *_ = read_stack_file(tmp_path / "stack_vip_svd.bin")
    assert filt.shape == raw.shape and np.all(filt >= 0)
    assert not np.allclose(filt, raw)
    assert "svd_seconds" in pipeline.read_manifest(tmp_path)["costs"]["vip"]
