import dataclasses
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ulmlab.config import ConfigError, ExperimentConfig, GridSection, PhantomSection, SvdSection

CONFIGS = sorted((Path(__file__).parents[1] / "configs").glob("*.ini"))


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path):
    cfg = ExperimentConfig.load(path)
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg
    assert again.to_text() == cfg.to_text()


def test_default_grid_is_desk_scale():
    g = GridSection().grid()
    assert g.counts == (81, 103, 81)
    assert g.origin == pytest.approx((-4e-3, -5.1e-3, 16e-3))
    assert g.center_y_index() == 51


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    conc=st.sampled_from([1, 2, 5]),
    snr=st.one_of(st.just(math.inf), st.floats(-10, 40)),
    thr=st.floats(0.01, 0.99),
    high=st.one_of(st.none(), st.integers(2, 50)),
    schemes=st.permutations(["ef", "cs", "vip", "3d"]).flatmap(lambda p: st.integers(1, 4).map(lambda n: tuple(p[:n]))),
    radii=st.lists(st.floats(1e-5, 1e-3), min_size=1, max_size=3).map(tuple),
)
def test_round_trip_property(seed, conc, snr, thr, high, schemes, radii):
    cfg = ExperimentConfig()
    cfg.phantom = dataclasses.replace(cfg.phantom, seed=seed, concentration=conc, total_per_tube=10 * conc)
    cfg.noise = dataclasses.replace(cfg.noise, snr_db=snr)
    cfg.localize = dataclasses.replace(cfg.localize, threshold=thr)
    cfg.svd = dataclasses.replace(cfg.svd, mode="manual", low_cut=1, high_cut=high)
    cfg.experiment = dataclasses.replace(cfg.experiment, schemes=schemes)
    cfg.metrics = dataclasses.replace(cfg.metrics, ring_radii=radii)
    cfg.validate()
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg


BASE = "[experiment]\nname = t\n[phantom]\nseed = 3\n"


def test_missing_sections_take_defaults():
    cfg = ExperimentConfig.from_text(BASE)
    assert cfg.phantom.seed == 3
    assert cfg.grid == GridSection()


@pytest.mark.parametrize(
    "text",
    [
        "[phantom]\nseed = 1\n",  # no [experiment]
        "[experiment]\nname = t\n",  # no [phantom]
        "[experiment]\n[phantom]\nkind = cross\n",  # no explicit phantom seed
        BASE + "[noise]\nsnr_db = 3\n",  # noise without a seed
        BASE + "[bogus]\na = 1\n",
        BASE + "[grid]\nspacing_q = 1\n",
        BASE + "[grid]\nspacing_x = fast\n",
        BASE + "[grid]\nspacing_x = 0\n",
        BASE + "[svd]\nmode = sometimes\n",
        BASE + "[experiment]\n",  # duplicate section
        "[experiment]\nschemes = vip, 2d\n[phantom]\nseed = 1\n",
        "[experiment]\nschemes = vip, vip\n[phantom]\nseed = 1\n",
        BASE.replace("seed = 3", "seed = 3\nconcentration = 3\ntotal_per_tube = 10"),
        BASE + "[grid]\ny_min = -1e-3\ny_max = 1.1e-3\n",  # y = 0 not sampled
        BASE.replace("seed = 3", "seed = 3\nn_tubes = 3"),  # no canonical 3-tube layout
    ],
)
def test_invalid_configs_raise_config_error(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "nope.ini")


def test_explicit_layout_overrides_canonical():
    ph = PhantomSection(n_tubes=2, azimuths_deg=(-30.0, 30.0), tilts_deg=(0.0, 15.0), y_offsets=(0.0, 0.0))
    tubes = ph.layout().tubes()
    assert tubes[0].direction[1] == 0.0
    assert tubes[1].direction[1] == pytest.approx(math.sin(math.radians(15)))


def test_svd_high_cut_none_round_trips():
    cfg = ExperimentConfig(svd=SvdSection(mode="manual", low_cut=2, high_cut=None))
    assert "high_cut = none" in cfg.to_text()
    assert ExperimentConfig.from_text(cfg.to_text()).svd.high_cut is None
