import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualsparse.errors import ContractError, DimensionError
from dualsparse.grouping import (
    GroupingConfig,
    PatchIndex,
    euclidean_similarity,
    form_group,
    ppb_similarity,
    reference_indices,
)
from dualsparse.patches import extract_patches


def test_euclidean_examples(rng):
    x = rng.normal(size=16)
    assert euclidean_similarity(x, x) == 0.0
    assert euclidean_similarity([0, 0], [3, 4]) == 25.0
    for _ in range(10):
        a, b = rng.normal(size=9), rng.normal(size=9)
        assert euclidean_similarity(a, b) == euclidean_similarity(b, a)
    with pytest.raises(DimensionError):
        euclidean_similarity([1, 2], [1, 2, 3])


def test_ppb_identical_patches_n_log2(rng):
    x = rng.normal(size=64)
    assert ppb_similarity(x, x, looks=1) == pytest.approx(64 * math.log(2), rel=1e-14)
    assert ppb_similarity(x, x, looks=3) == pytest.approx(5 * 64 * math.log(2), rel=1e-14)


def test_ppb_matches_ratio_formula(rng):
    y_i, y_j = rng.uniform(0.5, 5, 20), rng.uniform(0.5, 5, 20)
    direct = (2 * 2 - 1) * np.sum(np.log(np.sqrt(y_i / y_j) + np.sqrt(y_j / y_i)))
    assert ppb_similarity(np.log(y_i), np.log(y_j), looks=2) == pytest.approx(direct, rel=1e-12)


def test_ppb_offset_invariance_and_symmetry(rng):
    a, b = rng.normal(size=25), rng.normal(size=25)
    assert ppb_similarity(a + 3.7, b + 3.7) == pytest.approx(ppb_similarity(a, b), rel=1e-12)
    assert ppb_similarity(a, b) == pytest.approx(ppb_similarity(b, a), rel=1e-15)


def test_ppb_stable_for_large_gaps():
    v = ppb_similarity([800.0], [-800.0])
    assert math.isfinite(v) and v == pytest.approx(800.0)
    with pytest.raises(ContractError):
        ppb_similarity([np.inf], [0.0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**20), looks=st.integers(1, 8))
def test_self_minimality(seed, looks):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=16), r.normal(size=16)
    assert euclidean_similarity(x, x) <= euclidean_similarity(x, y)
    floor = 16 * math.log(2) * (2 * looks - 1)
    assert ppb_similarity(x, x, looks) == pytest.approx(floor, rel=1e-12)
    assert ppb_similarity(x, x, looks) <= ppb_similarity(x, y, looks) + 1e-12
    assert euclidean_similarity(x, y) >= 0


def test_gamma_one_is_reference_only(rng):
    pm = extract_patches(rng.normal(size=(20, 20)), 4)
    g = form_group(pm, 37, GroupingConfig(gamma=1, window=11))
    assert g.member_indices.tolist() == [37]
    assert g.similarities.tolist() == [0.0]


def test_constant_image_tie_break():
    pm = extract_patches(np.full((16, 16), 5.0), 4)
    cfg = GroupingConfig(gamma=6, window=8)
    g = form_group(pm, 0, cfg)
    window = PatchIndex(pm).window(0, (8 - 4) // 2)
    assert g.member_indices.tolist() == sorted(window.tolist())[:6]
    ref = 2 * 13 + 2
    g = form_group(pm, ref, cfg)
    others = [i for i in PatchIndex(pm).window(ref, 2).tolist() if i != ref]
    assert g.member_indices.tolist() == [ref] + others[:5]


def _brute_group(pm, ref, cfg):
    half = (cfg.window - pm.patch_edge) // 2
    r0, c0 = pm.origins[ref]
    cands = []
    for j, (r, c) in enumerate(pm.origins):
        if j != ref and abs(r - r0) <= half and abs(c - c0) <= half:
            if cfg.metric == "euclidean":
                s = euclidean_similarity(pm.data[:, ref], pm.data[:, j])
            else:
                s = ppb_similarity(pm.data[:, ref], pm.data[:, j], cfg.looks)
            cands.append((s, j))
    cands.sort()
    return [ref] + [j for _, j in cands[: cfg.gamma - 1]]


@pytest.mark.parametrize("metric", ["euclidean", "ppb"])
def test_group_matches_exhaustive_knn(rng, metric):
    pm = extract_patches(rng.normal(size=(24, 24)), 5)
    cfg = GroupingConfig(gamma=12, window=13, metric=metric, looks=2)
    for ref in [0, 57, 199, pm.count - 1]:
        assert form_group(pm, ref, cfg).member_indices.tolist() == _brute_group(pm, ref, cfg)


def test_group_invariants(rng):
    pm = extract_patches(rng.normal(size=(18, 18)), 4)
    g = form_group(pm, 40, GroupingConfig(gamma=20, window=12))
    assert len(set(g.member_indices.tolist())) == g.size
    assert g.member_indices[0] == 40
    assert np.all(np.diff(g.similarities) >= 0)


def test_shortfall_reported(rng):
    pm = extract_patches(rng.normal(size=(6, 6)), 4)
    g = form_group(pm, 0, GroupingConfig(gamma=90, window=39))
    assert g.size == pm.count and g.shortfall == 90 - pm.count


def test_reference_out_of_range(rng):
    pm = extract_patches(rng.normal(size=(6, 6)), 4)
    with pytest.raises(IndexError):
        form_group(pm, pm.count, GroupingConfig())


def test_reference_grid_covers_borders():
    pm = extract_patches(np.zeros((30, 30)), 8)
    refs = reference_indices(pm, 4)
    rows = sorted(set(pm.origins[refs, 0].tolist()))
    assert rows == [0, 4, 8, 12, 16, 20, 22]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**20), g1=st.integers(1, 30), extra=st.integers(0, 30))
def test_determinism_and_gamma_monotonicity(seed, g1, extra):
    pm = extract_patches(np.random.default_rng(seed).normal(size=(16, 16)), 4)
    small = form_group(pm, 30, GroupingConfig(gamma=g1, window=12))
    again = form_group(pm, 30, GroupingConfig(gamma=g1, window=12))
    large = form_group(pm, 30, GroupingConfig(gamma=g1 + extra, window=12))
    assert np.array_equal(small.member_indices, again.member_indices)
    assert set(small.member_indices.tolist()) <= set(large.member_indices.tolist())


def test_config_validation():
    for bad in (dict(gamma=0), dict(metric="l1"), dict(looks=0.5), dict(ref_stride=0)):
        with pytest.raises(ValueError):
            GroupingConfig(**bad)
