import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualsparse.errors import CoverageError, DimensionError
from dualsparse.patches import (
    PatchMatrix,
    PixelAccumulator,
    aggregate,
    devectorize_patch,
    extract_patches,
    vectorize_patch,
)


def test_single_patch_image():
    pm = extract_patches(np.arange(64.0).reshape(8, 8), 8, 1)
    assert pm.count == 1
    assert pm.origins.tolist() == [[0, 0]]


def test_nine_by_nine_exhaustive_grid():
    pm = extract_patches(np.zeros((9, 9)), 8, 1)
    assert pm.count == 4
    assert pm.origins.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]


def _brute_force_positions(h, w, n, s):
    rows = sorted({r for r in range(h - n + 1) if r % s == 0} | {h - n})
    cols = sorted({c for c in range(w - n + 1) if c % s == 0} | {w - n})
    return [(r, c) for r in rows for c in cols]


@pytest.mark.parametrize("shape,n,s", [((512, 512), 8, 4), ((37, 23), 5, 3), ((10, 31), 4, 3)])
def test_patch_count_matches_enumeration(shape, n, s):
    pm = extract_patches(np.zeros(shape), n, s)
    expected = _brute_force_positions(*shape, n, s)
    assert pm.count == len(expected)
    assert [tuple(o) for o in pm.origins.tolist()] == expected


def test_large_stride_keeps_grid_and_fills_gaps():
    pm = extract_patches(np.zeros((1, 20)), 1, 7)
    cols = pm.origins[:, 1].tolist()
    assert {0, 7, 14, 19} <= set(cols)
    assert cols == list(range(20))
    pm = extract_patches(np.zeros((3, 20)), 3, 7)
    assert sorted(set(pm.origins[:, 1].tolist())) == [0, 3, 6, 7, 10, 13, 14, 17]


def test_columns_are_row_major_patches(rng):
    img = rng.normal(size=(12, 10))
    pm = extract_patches(img, 3, 2)
    for j, (r, c) in enumerate(pm.origins):
        assert np.array_equal(pm.data[:, j], img[r : r + 3, c : c + 3].ravel())


def test_patch_larger_than_image():
    with pytest.raises(DimensionError):
        extract_patches(np.zeros((5, 9)), 6, 1)
    with pytest.raises(DimensionError):
        extract_patches(np.zeros((9, 9)), 3, 0)


def test_vectorize_examples(rng):
    assert vectorize_patch([[1, 2], [3, 4]]).tolist() == [1, 2, 3, 4]
    assert not vectorize_patch(np.zeros((3, 3))).any()
    p = rng.normal(size=(8, 8))
    assert np.array_equal(devectorize_patch(vectorize_patch(p), 8), p)
    with pytest.raises(DimensionError):
        devectorize_patch(np.zeros(10), 3)


def test_aggregate_identity_single_patch(rng):
    img = rng.normal(size=(6, 6))
    pm = extract_patches(img, 6, 1)
    est = rng.normal(size=(36, 1))
    out = aggregate(pm, est, [1.0])
    assert np.array_equal(out, est.reshape(6, 6))


def test_aggregate_two_overlapping_patches():
    origins = np.array([[0, 0], [0, 0]])
    pm = PatchMatrix(4, np.zeros((16, 2)), origins, (4, 4))
    est = np.column_stack([np.full(16, 3.0), np.full(16, 8.0)])
    out = aggregate(pm, est, [1.0, 1.0])
    assert np.allclose(out, 5.5)


def test_aggregate_matches_per_pixel_loop(rng):
    img = rng.normal(size=(16, 16))
    pm = extract_patches(img, 4, 3)
    est = rng.normal(size=pm.data.shape)
    w = rng.uniform(0.1, 2.0, size=pm.count)
    num = np.zeros((16, 16))
    den = np.zeros((16, 16))
    for j, (r, c) in enumerate(pm.origins):
        for a in range(4):
            for b in range(4):
                num[r + a, c + b] += w[j] * est[a * 4 + b, j]
                den[r + a, c + b] += w[j]
    assert np.max(np.abs(aggregate(pm, est, w) - num / den)) < 1e-12


def test_uncovered_pixels_raise():
    pm = PatchMatrix(2, np.zeros((4, 1)), np.array([[0, 0]]), (3, 3))
    with pytest.raises(CoverageError):
        aggregate(pm, np.zeros((4, 1)))
    acc = PixelAccumulator((2, 2))
    acc.add(np.array([[0, 0]]), 2, np.ones((4, 1)), [0.0])
    with pytest.raises(CoverageError):
        acc.result()


def test_nonpositive_weights_rejected():
    pm = extract_patches(np.zeros((4, 4)), 4)
    with pytest.raises(DimensionError):
        aggregate(pm, np.zeros((16, 1)), [0.0])


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(4, 20),
    w=st.integers(4, 20),
    n=st.integers(1, 4),
    s=st.integers(1, 6),
    seed=st.integers(0, 2**16),
)
def test_round_trip_and_coverage(h, w, n, s, seed):
    img = np.random.default_rng(seed).normal(size=(h, w))
    pm = extract_patches(img, n, s)
    acc = PixelAccumulator((h, w))
    acc.add(pm.origins, n, pm.data, np.ones(pm.count))
    assert not acc.uncovered().any()
    assert np.max(np.abs(acc.result() - img)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 2**16))
def test_aggregation_scale_invariant(scale, seed):
    r = np.random.default_rng(seed)
    pm = extract_patches(r.normal(size=(10, 11)), 3, 2)
    est = r.normal(size=pm.data.shape)
    w = r.uniform(0.5, 1.5, pm.count)
    assert np.allclose(aggregate(pm, est, w), aggregate(pm, est, scale * w), rtol=1e-12, atol=1e-12)
