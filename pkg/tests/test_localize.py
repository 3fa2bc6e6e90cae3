import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from ulmlab.geometry import VoxelGrid
from ulmlab.localize import (
    MULTI,
    SINGLE,
    DensityMap,
    DetectParams,
    Patch,
    _patches,
    accumulate,
    classify,
    detect,
    eccentricity,
    localize_stack,
    render,
    solidity,
)


def gaussian(shape, center, sigma=1.5, amp=1.0):
    grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    r2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return amp * np.exp(-r2 / (2 * sigma**2))


def test_isotropic_blob_gives_one_centroid_near_its_peak():
    img = gaussian((32, 32), (12.3, 17.6))
    res = detect(img)
    assert len(res.positions) == 1
    assert np.all(np.abs(res.positions[0] - np.array([12.3, 17.6])) < 0.5)
    assert res.peaks[0] == pytest.approx(img.max())


def test_distant_blobs_give_two_centroids():
    img = gaussian((40, 40), (10, 10)) + gaussian((40, 40), (28, 30))
    assert len(detect(img).positions) == 2


def test_bridged_blobs_split_after_rethreshold():
    img = gaussian((40, 40), (20, 12), sigma=2.0) + gaussian((40, 40), (20, 28), sigma=2.0)
    # a one-pixel bridge at 1.1x the initial threshold of 0.2 x max
    img[20, 12:29] = np.maximum(img[20, 12:29], 0.22)
    params = DetectParams(threshold=0.2)
    structure = ndimage.generate_binary_structure(2, 2)
    initial = _patches(img, img > 0.2, structure)
    assert len(initial) == 1 and classify(initial[0], params) == MULTI
    # at 1.2x the bridge is gone
    assert ndimage.label(img > 0.24, structure)[1] == 2
    res = detect(img, params)
    assert len(res.positions) == 2
    assert np.allclose(res.positions, [[20, 12], [20, 28]], atol=0.3)


def test_weighted_centroid_toy_case():
    p = Patch(np.array([[0], [1]]), np.array([1.0, 3.0]))
    assert p.centroid()[0] == 0.75
    res = detect(np.array([1.0, 3.0]), DetectParams(threshold=0.5, mode="absolute"))
    assert res.positions[:, 0].tolist() == [0.75]


def test_empty_frame_gives_no_centroids():
    assert len(detect(np.zeros((8, 8))).positions) == 0
    assert len(detect(np.zeros((4, 4, 4)), DetectParams(threshold=1.0, mode="absolute")).positions) == 0


def test_small_patches_are_noise():
    img = np.zeros((10, 10))
    img[5, 5] = 1.0
    res = detect(img)
    assert len(res.positions) == 0 and res.discarded_noise == 1


def test_unsplittable_patch_is_discarded_at_the_cap():
    img = np.zeros((30, 30))
    img[5:25, 5:25] = 1.0  # 400 flat voxels: too large and never splits
    res = detect(img, DetectParams(max_iterations=3))
    assert len(res.positions) == 0 and res.discarded_multi == 1


def test_3d_blob():
    vol = gaussian((20, 20, 20), (9.5, 10.2, 8.8))
    res = detect(vol)
    assert len(res.positions) == 1
    assert np.all(np.abs(res.positions[0] - [9.5, 10.2, 8.8]) < 0.5)


def test_shape_features():
    square = np.argwhere(np.ones((4, 4)))
    assert solidity(square) == 1.0
    ell = np.argwhere(np.pad(np.ones((1, 6)), ((0, 5), (0, 0))) + np.pad(np.ones((6, 1)), ((0, 0), (0, 5))) > 0)
    assert solidity(ell) < 0.7
    assert eccentricity(square) == pytest.approx(0.0, abs=1e-12)
    line = np.column_stack([np.zeros(9), np.arange(9)])
    assert eccentricity(line) > 0.99
    assert classify(Patch(square, np.ones(16)), DetectParams()) == SINGLE


def test_stack_mode_needs_a_reference():
    with pytest.raises(ValueError):
        detect(np.ones((4, 4)), DetectParams(mode="stack"))
    with pytest.raises(ValueError):
        DetectParams(mode="other")
    with pytest.raises(ValueError):
        DetectParams(step=1.0)


def test_localize_stack_reports_meters():
    grid = VoxelGrid((-1e-3, 0.0, 0.019), (1e-4, 1e-4, 5e-5), (21, 1, 41))
    frames = np.zeros((3, 21, 1, 41), np.float32)
    frames[0, :, 0, :] = gaussian((21, 41), (10, 20))
    frames[2, :, 0, :] = 0.5 * gaussian((21, 41), (5, 8))
    locs = localize_stack(frames, grid, DetectParams(threshold=0.2, mode="stack"))
    assert locs.n_frames == 3 and locs.total == 2
    assert np.allclose(locs.positions[0], [[0.0, 0.0, 0.02]], atol=1e-9)
    assert np.allclose(locs.positions[2], [[-5e-4, 0.0, 0.0194]], atol=1e-9)
    threaded = localize_stack(frames, grid, DetectParams(threshold=0.2, mode="stack"), workers=3)
    assert all(np.array_equal(a, b) for a, b in zip(locs.positions, threaded.positions))


frames2d = arrays(np.float64, st.tuples(st.integers(3, 16), st.integers(3, 16)), elements=st.floats(0, 10))


@settings(max_examples=60, deadline=None)
@given(frames2d, st.floats(0.05, 0.9), st.floats(1.01, 3))
def test_raising_threshold_never_adds_voxels(frame, t, factor):
    assert (frame > t * factor * frame.max()).sum() <= (frame > t * frame.max()).sum()


@settings(max_examples=60, deadline=None)
@given(frames2d, st.floats(0.01, 1e3))
def test_centroids_are_scale_invariant(frame, scale):
    a = detect(frame)
    b = detect(frame * scale)
    assert a.positions.shape == b.positions.shape
    assert np.allclose(a.positions, b.positions, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 30))
def test_centroid_lies_in_patch_bounding_box(seed, n):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 20, size=(n, 3))
    p = Patch(idx, rng.random(n) + 1e-3)
    c = p.centroid()
    assert np.all(c >= idx.min(axis=0) - 1e-12) and np.all(c <= idx.max(axis=0) + 1e-12)


@settings(max_examples=40, deadline=None)
@given(frames2d, st.integers(0, 4))
def test_rethreshold_terminates_and_stays_inside(frame, cap):
    res = detect(frame, DetectParams(max_iterations=cap))
    assert res.discarded_multi >= 0 and res.discarded_noise >= 0
    if len(res.positions):
        assert np.all(res.positions >= 0) and np.all(res.positions <= np.array(frame.shape) - 1)


MAP = VoxelGrid((0.0, 0.0, 0.0), (1e-4,) * 3, (10, 1, 10))


def test_accumulate_examples():
    pts = np.tile([[3e-4, 0.0, 5e-4]], (7, 1))
    d = accumulate(pts, MAP)
    assert d.counts[3, 0, 5] == 7 and d.total == 7
    assert accumulate(np.zeros((0, 3)), MAP).total == 0
    out = accumulate([[5e-3, 0.0, 0.0]], MAP)
    assert out.total == 0 and out.discarded == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_accumulate_ignores_input_order(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 9e-4, size=(50, 3))
    a = accumulate(pts, MAP).counts
    b = accumulate(pts[rng.permutation(50)], MAP).counts
    assert np.array_equal(a, b)
    assert a.sum() == 50


def test_render_examples():
    counts = np.zeros((11, 1, 11), np.int64)
    counts[5, 0, 5] = 1
    d = DensityMap(MAP, counts)
    assert np.array_equal(render(d, 0), counts)
    img = render(d, 1.0)
    assert np.unravel_index(img.argmax(), img.shape) == (5, 0, 5)
    assert img.sum() == pytest.approx(1.0, abs=1e-6)
    counts[5, 0, 5] = 0
    counts[3, 0, 5] = counts[7, 0, 5] = 1
    img = render(DensityMap(MAP, counts), 1.0)[:, 0, :]
    assert np.allclose(img, img[::-1, :])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.3, 3))
def test_render_preserves_mass(seed, sigma):
    counts = np.random.default_rng(seed).integers(0, 5, size=(12, 1, 9))
    assert render(DensityMap(MAP, counts), sigma).sum() == pytest.approx(counts.sum(), rel=1e-6)
