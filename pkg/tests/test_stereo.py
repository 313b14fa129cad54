"""Unit tests for the stereo matching chain.

Brute-force oracles (per-pixel argmin, sliding-window mean/median) are
implemented inline and compared exactly or within float tolerance.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defence.stereo import (CostVolume, DisparityMap, StereoError, aggregate_costs,
                            build_cost_volume, compute_disparity,
                            compute_disparity_pair, extract_descriptor,
                            left_right_check, matching_cost, median_fill,
                            winner_take_all)

RNG = np.random.default_rng(123)


# --------------------------------------------------------------------------
# descriptors and matching cost
# --------------------------------------------------------------------------

def test_census_descriptor_shape_and_values():
    img = RNG.random((16, 16))
    d = extract_descriptor(img, 8, 8, "census")
    assert d.shape == (80,)
    assert set(np.unique(d)) <= {-1.0, 1.0}


def test_zeromean_descriptor_is_centered():
    img = RNG.random((16, 16))
    d = extract_descriptor(img, 8, 8, "zeromean")
    assert d.shape == (81,)
    assert abs(d.mean()) < 1e-12


def test_census_invariant_under_monotone_map():
    img = RNG.random((16, 16))
    warped = np.tanh(3.0 * img) * 0.5 + 0.25  # strictly increasing
    d1 = extract_descriptor(img, 8, 8, "census")
    d2 = extract_descriptor(warped, 8, 8, "census")
    assert np.array_equal(d1, d2)


def test_descriptor_rejects_unknown_kind():
    with pytest.raises(StereoError):
        extract_descriptor(RNG.random((16, 16)), 8, 8, "sift")


def test_matching_cost_trivial_values():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    assert matching_cost(a, b) == pytest.approx(0.0)        # orthogonal
    assert matching_cost(a, -a) == pytest.approx(1.0)       # opposite
    assert matching_cost(a, a) == pytest.approx(-1.0)       # identical
    assert matching_cost(a, np.zeros(2)) == 0.0             # null descriptor


def test_matching_cost_symmetric_and_bounded():
    for _ in range(50):
        a = RNG.standard_normal(80)
        b = RNG.standard_normal(80)
        c = matching_cost(a, b)
        assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12
        assert c == pytest.approx(matching_cost(b, a))


def test_matching_cost_length_mismatch():
    with pytest.raises(StereoError):
        matching_cost(np.zeros(80), np.zeros(81))


# --------------------------------------------------------------------------
# cost volume
# --------------------------------------------------------------------------

def test_zero_baseline_self_match():
    img = RNG.random((24, 24))
    cv = build_cost_volume(img, img, d_max=8)
    assert np.allclose(cv.cost[:, :, 0], -1.0)
    assert np.all(cv.cost[:, :, 0] <= cv.cost.min(axis=2) + 1e-12)


def test_cost_volume_sentinel_out_of_frame():
    img = RNG.random((20, 20))
    cv = build_cost_volume(img, img, d_max=16)
    # column 3, disparity 10 would match column -7
    assert cv.cost[5, 3, 10] == 1.0


def test_cost_volume_matches_per_pixel_descriptors():
    # vectorized volume equals the scalar descriptor/cost path
    left = RNG.random((14, 18))
    right = RNG.random((14, 18))
    cv = build_cost_volume(left, right, d_max=4)
    for (r, c, d) in [(7, 9, 0), (7, 9, 3), (6, 12, 4), (8, 5, 1)]:
        dl = extract_descriptor(left, r, c, "census")
        dr = extract_descriptor(right, r, c - d, "census")
        assert cv.cost[r, c, d] == pytest.approx(matching_cost(dl, dr), abs=1e-12)


def test_cost_volume_rejects_bad_inputs():
    with pytest.raises(StereoError):
        build_cost_volume(np.zeros((8, 8)), np.zeros((8, 9)), 4)
    with pytest.raises(StereoError):
        build_cost_volume(np.zeros((8, 8)), np.zeros((8, 8)), 8)
    with pytest.raises(StereoError):
        build_cost_volume(np.zeros((8, 8)), np.zeros((8, 8)), 4, direction="up")


def test_shifted_pair_argmin_is_shift():
    shift = 7
    img = RNG.random((64, 64))
    # left pixel (r, c) matches right pixel (r, c - shift)
    left = np.ascontiguousarray(img[:, :48])
    right = np.ascontiguousarray(img[:, shift:shift + 48])
    cv = build_cost_volume(left, right, d_max=12)
    wta = winner_take_all(cv)
    interior = wta.disparity[6:-6, shift + 6:-6]
    assert np.mean(interior == shift) >= 0.95


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------

def test_aggregate_radius_zero_identity():
    cv = CostVolume(cost=RNG.random((6, 6, 3)) * 2 - 1)
    assert aggregate_costs(cv, 0) is cv


def test_aggregate_constant_slice_unchanged():
    cv = CostVolume(cost=np.full((10, 10, 2), 0.25))
    out = aggregate_costs(cv, 2)
    assert np.allclose(out.cost, 0.25)


def test_aggregate_matches_naive_window_mean():
    cv = CostVolume(cost=RNG.random((8, 8, 4)) * 2 - 1)
    out = aggregate_costs(cv, 1)
    padded = np.pad(cv.cost, ((1, 1), (1, 1), (0, 0)), mode="edge")
    for r in range(8):
        for c in range(8):
            expect = padded[r:r + 3, c:c + 3].mean(axis=(0, 1))
            assert np.allclose(out.cost[r, c], expect, atol=1e-12)


def test_aggregate_rejects_negative_radius():
    with pytest.raises(StereoError):
        aggregate_costs(CostVolume(cost=np.zeros((4, 4, 2))), -1)


# --------------------------------------------------------------------------
# winner-take-all
# --------------------------------------------------------------------------

def test_wta_unique_minimizer():
    d_max = 10
    d_axis = np.arange(d_max + 1)
    cost = np.tile(np.abs(d_axis - 5) / d_max, (6, 6, 1))
    assert np.all(winner_take_all(CostVolume(cost=cost)).disparity == 5)


def test_wta_tie_breaks_toward_smaller():
    cost = np.ones((3, 3, 12))
    cost[:, :, 2] = 0.0
    cost[:, :, 9] = 0.0
    assert np.all(winner_take_all(CostVolume(cost=cost)).disparity == 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_wta_equals_brute_force_argmin(seed):
    rng = np.random.default_rng(seed)
    cost = rng.random((5, 7, 9))
    out = winner_take_all(CostVolume(cost=cost))
    for r in range(5):
        for c in range(7):
            assert out.disparity[r, c] == int(np.argmin(cost[r, c]))
    assert out.valid.all()


# --------------------------------------------------------------------------
# left-right check
# --------------------------------------------------------------------------

def _const_map(shape, value):
    return DisparityMap(disparity=np.full(shape, float(value)),
                        valid=np.ones(shape, dtype=bool))


def test_lr_check_constant_maps():
    dl = _const_map((6, 12), 4)
    dr = _const_map((6, 12), 4)
    out = left_right_check(dl, dr)
    assert not out.valid[:, :4].any()  # lookup out of frame
    assert out.valid[:, 4:].all()


def test_lr_check_disagreement_invalidates():
    dl = _const_map((4, 16), 4)
    dr = _const_map((4, 16), 9)
    out = left_right_check(dl, dr, tol=1.0)
    assert not out.valid.any()


def test_lr_check_size_mismatch():
    with pytest.raises(StereoError):
        left_right_check(_const_map((4, 8), 1), _const_map((4, 9), 1))


# --------------------------------------------------------------------------
# median fill
# --------------------------------------------------------------------------

def test_median_fill_constant_map_unchanged():
    dm = _const_map((9, 9), 5)
    out = median_fill(dm)
    assert np.array_equal(out.disparity, dm.disparity)
    assert out.valid.all()


def test_median_fill_single_hole():
    disp = np.full((9, 9), 5.0)
    valid = np.ones((9, 9), dtype=bool)
    valid[4, 4] = False
    disp[4, 4] = 0.0
    out = median_fill(DisparityMap(disparity=disp, valid=valid))
    assert out.valid[4, 4]
    assert out.disparity[4, 4] == 5.0


def _brute_fill(disp, valid, radius):
    h, w = disp.shape
    fill_val = disp.copy()
    fill_ok = valid.copy()
    for r in range(h):
        for c in range(w):
            if valid[r, c]:
                continue
            win_v = valid[max(0, r - radius):r + radius + 1,
                          max(0, c - radius):c + radius + 1]
            win_d = disp[max(0, r - radius):r + radius + 1,
                         max(0, c - radius):c + radius + 1]
            if win_v.sum() >= 3:
                fill_val[r, c] = np.median(win_d[win_v])
                fill_ok[r, c] = True
    return fill_val, fill_ok


def test_median_fill_matches_brute_force_oracle():
    rng = np.random.default_rng(99)
    disp = np.round(rng.random((12, 12)) * 10)
    valid = rng.random((12, 12)) > 0.1
    disp = np.where(valid, disp, 0.0)
    expect_fill, expect_valid = _brute_fill(disp, valid, 2)
    # second pass: 3x3 median over all valid
    smooth, _ = _brute_fill(np.where(expect_valid, expect_fill, 0.0),
                            np.zeros_like(expect_valid), 0)  # placeholder
    out = median_fill(DisparityMap(disparity=disp, valid=valid), radius=2)
    assert np.array_equal(out.valid, expect_valid)
    # verify the final smoothing against a direct 3x3 valid-median
    h, w = disp.shape
    for r in range(h):
        for c in range(w):
            if not expect_valid[r, c]:
                assert out.disparity[r, c] == 0.0
                continue
            win_v = expect_valid[max(0, r - 1):r + 2, max(0, c - 1):c + 2]
            win_d = expect_fill[max(0, r - 1):r + 2, max(0, c - 1):c + 2]
            assert out.disparity[r, c] == pytest.approx(np.median(win_d[win_v]))


# --------------------------------------------------------------------------
# full chain
# --------------------------------------------------------------------------

def test_full_chain_recovers_constant_shift():
    shift = 5
    img = RNG.random((48, 72))
    left = np.ascontiguousarray(img[:, :56])
    right = np.ascontiguousarray(img[:, shift:shift + 56])
    dm = compute_disparity(left, right, d_max=10, agg_radius=1)
    interior = dm.disparity[8:-8, shift + 8:-8]
    assert np.mean(np.abs(interior - shift) <= 0.5) >= 0.95


def test_disparity_pair_is_deterministic():
    left = RNG.random((32, 40))
    right = RNG.random((32, 40))
    a = compute_disparity_pair(left, right, d_max=6)
    b = compute_disparity_pair(left, right, d_max=6)
    assert np.array_equal(a[0].disparity, b[0].disparity)
    assert np.array_equal(a[0].valid, b[0].valid)
    assert np.array_equal(a[1].disparity, b[1].disparity)
