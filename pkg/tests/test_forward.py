import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ulmlab.forward import (
    FULL_LAYOUT,
    Scatterer,
    acquisition_window,
    add_noise,
    reduce_channels,
    simulate_frame,
    superpose,
)
from ulmlab.geometry import ArrayConfig, ChannelMap, ImagingScheme, Scheme, VoxelGrid, build_array, channel_map, lens_delay
from ulmlab.waveform import analytic_signal, make_pulse

PULSE = make_pulse()
GEOM = build_array()
SMALL = build_array(ArrayConfig(n_cols=4, n_rows=4, rows_per_subaperture=2))
ONE = build_array(ArrayConfig(n_cols=1, n_rows=1, dead_slots=()))


def _echo_time(rf, channel=0, up=32):
    env = np.abs(analytic_signal(rf.data[channel], upsample=up, pad=64))
    return rf.t0 + np.argmax(env) / (rf.fs * up), env.max()


def test_two_way_delay_oracle():
    # (0.02 m down + 0.02 m back) / 1540 m/s
    expected = 0.04 / 1540.0
    assert expected == pytest.approx(25.974e-6, abs=1e-9)
    rf = simulate_frame([(0.0, 0.0, 0.02)], ONE, PULSE)
    t_peak, _ = _echo_time(rf)
    # the pulse's Hann envelope peaks center_time after onset
    assert t_peak - rf.pulse_center == pytest.approx(expected, abs=4e-9)


def test_receive_spreading_halves_amplitude_at_double_range():
    _, a1 = _echo_time(simulate_frame([(0.0, 0.0, 0.01)], ONE, PULSE))
    _, a2 = _echo_time(simulate_frame([(0.0, 0.0, 0.02)], ONE, PULSE))
    assert a2 / a1 == pytest.approx(0.5, rel=0.02)


def test_zero_amplitude_scatterer_gives_silence():
    rf = simulate_frame([Scatterer((0.0, 0.0, 0.02), 0.0)], SMALL, PULSE)
    assert not rf.data.any()


def test_coincident_scatterers_double_the_rf():
    win = (2.5e-5, 200)
    one = simulate_frame([(1e-4, 2e-4, 0.02)], SMALL, PULSE, window=win)
    two = simulate_frame([(1e-4, 2e-4, 0.02)] * 2, SMALL, PULSE, window=win)
    assert np.allclose(two.data, 2 * one.data, rtol=1e-12, atol=0)


def test_scatterer_behind_aperture_is_rejected():
    with pytest.raises(ValueError):
        simulate_frame([(0.0, 0.0, 0.0)], SMALL, PULSE)
    with pytest.raises(ValueError):
        simulate_frame(np.zeros((0, 3)), SMALL, PULSE)


points = st.lists(
    st.tuples(st.floats(-2e-3, 2e-3), st.floats(-2e-3, 2e-3), st.floats(0.018, 0.022)), min_size=1, max_size=4
)


@settings(max_examples=25, deadline=None)
@given(points, points)
def test_simulation_is_linear_in_the_scatterer_set(a, b):
    grid = VoxelGrid((-2e-3, -2e-3, 0.018), (1e-3, 1e-3, 1e-3), (5, 5, 5))
    win = acquisition_window(SMALL, grid, PULSE)
    ra = simulate_frame(a, SMALL, PULSE, window=win)
    rb = simulate_frame(b, SMALL, PULSE, window=win)
    rab = simulate_frame(a + b, SMALL, PULSE, window=win)
    assert np.allclose(rab.data, ra.data + rb.data, rtol=0, atol=1e-12 * np.abs(rab.data).max())
    assert np.allclose(superpose([ra, rb]).data, rab.data, rtol=0, atol=1e-12 * np.abs(rab.data).max())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_vip_reduction_commutes_with_superposition(seed):
    rng = np.random.default_rng(seed)
    base = simulate_frame([(0.0, 0.0, 0.02)], SMALL, PULSE)
    f1 = base.__class__(rng.normal(size=base.data.shape), base.fs, base.t0, base.pulse_center)
    f2 = base.__class__(rng.normal(size=base.data.shape), base.fs, base.t0, base.pulse_center)
    for name in ("vip", "ef"):
        s = ImagingScheme.parse(name)
        lhs = reduce_channels(superpose([f1, f2]), s, SMALL).data
        rhs = reduce_channels(f1, s, SMALL).data + reduce_channels(f2, s, SMALL).data
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_acquisition_window_covers_the_deepest_voxel():
    grid = VoxelGrid((-4e-3, -5.1e-3, 0.016), (1e-4,) * 3, (81, 103, 81))
    t0, n = acquisition_window(GEOM, grid, PULSE)
    el = GEOM.element_positions
    corner = np.array([4e-3, 5.1e-3, 0.024])
    far = np.linalg.norm(el - corner, axis=1).max()
    t_last = (corner[2] + far) / 1540.0 + PULSE.duration
    assert t0 <= 2 * 0.016 / 1540.0
    assert t0 + (n - 1) / PULSE.sampling_frequency >= t_last


def test_snr_calibration():
    rf = simulate_frame([(x, 0.0, 0.02) for x in np.linspace(-3e-3, 3e-3, 7)], GEOM, PULSE)
    noisy = add_noise(rf, 3.0, 1234)
    x = rf.data
    support = np.abs(x) > 1e-3 * np.abs(x).max()
    p_s = np.mean(x[support] ** 2)
    p_n = np.mean((noisy.data - x) ** 2)
    assert 10 * np.log10(p_s / p_n) == pytest.approx(3.0, abs=0.2)


def test_noise_is_seeded_and_can_be_disabled():
    rf = simulate_frame([(0.0, 0.0, 0.02)], SMALL, PULSE)
    assert np.array_equal(add_noise(rf, np.inf, 1).data, rf.data)
    a = add_noise(rf, 3.0, np.random.SeedSequence([5, 0, 2]))
    b = add_noise(rf, 3.0, np.random.SeedSequence([5, 0, 2]))
    c = add_noise(rf, 3.0, np.random.SeedSequence([5, 1, 2]))
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_noise_on_silent_frame_is_an_error():
    rf = simulate_frame([Scatterer((0.0, 0.0, 0.02), 0.0)], SMALL, PULSE)
    with pytest.raises(ValueError):
        add_noise(rf, 3.0, 0)


def test_vip_of_single_active_element_is_that_trace():
    rf = simulate_frame([(0.0, 0.0, 0.02)], GEOM, PULSE)
    data = np.zeros_like(rf.data)
    e = 5 * 32 + 11  # column 5, row 11
    data[e] = rf.data[e]
    out = reduce_channels(rf.__class__(data, rf.fs, rf.t0, rf.pulse_center), ImagingScheme(Scheme.VIP), GEOM)
    assert out.n_channels == 32
    assert out.layout == "vip"
    assert np.array_equal(out.data[5], data[e])
    assert not np.delete(out.data, 5, axis=0).any()


def test_ef_reduction_matches_interpolation_oracle():
    rf = simulate_frame([(3e-4, 1e-3, 0.02)], SMALL, PULSE)
    out = reduce_channels(rf, ImagingScheme(Scheme.EF, 0.02), SMALL)
    t = rf.times
    tau = lens_delay(SMALL.element_positions[:, 1], 0.02)
    for k in range(SMALL.n_cols):
        ref = sum(
            np.interp(t + tau[e], t, rf.data[e], left=0.0, right=0.0) for e in np.flatnonzero(SMALL.column_index == k)
        )
        assert np.allclose(out.data[k], ref, atol=1e-12)


def test_ef_sum_is_time_symmetric_for_symmetric_delays():
    fs, n = 40e6, 201
    t = np.arange(n) / fs
    trace = np.exp(-(((t - t[100]) * 8e6) ** 2))
    geom = SMALL
    data = np.tile(trace, (geom.n_elements, 1))
    # delays symmetric about 50 ns: rows pair up as 50 +/- d
    d = np.array([0.0, 7e-9, -7e-9, 0.0])[geom.row_index]
    delays = 5e-8 + d
    base = channel_map(ImagingScheme(Scheme.EF, 0.02), geom)
    cmap = ChannelMap(base.scheme, base.groups, base.positions, base.lateral_index, delays)
    from ulmlab.forward import RFFrame

    out = reduce_channels(RFFrame(data, fs, 0.0, 0.0), base.scheme, geom, cmap).data[0]
    k = int(np.argmax(out))
    m = min(k, n - 1 - k) - 1
    assert np.allclose(out[k - m : k], out[k + 1 : k + m + 1][::-1], atol=1e-3 * out.max())


def test_reduce_needs_full_layout():
    rf = simulate_frame([(0.0, 0.0, 0.02)], SMALL, PULSE)
    vip = reduce_channels(rf, ImagingScheme(Scheme.VIP), SMALL)
    assert rf.layout == FULL_LAYOUT
    with pytest.raises(ValueError):
        reduce_channels(vip, ImagingScheme(Scheme.VIP), SMALL)
    assert reduce_channels(rf, ImagingScheme(Scheme.CS), SMALL) is rf
