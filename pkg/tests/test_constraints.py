import numpy as np
import pytest

from core.constraints import (FlankProfile, StructuringElement, binarize, check_c1_c3, check_c4,
                              measure_compliance, open_close, postprocess, structuring_element)
from core.errors import ConfigError
from core.model import BeadingPattern
from core.patterns import GenConfig, sample_pattern


def _shift_all(m, se, combine):
    """구조 요소의 모든 오프셋으로 민 배열을 combine 으로 누적 (배열 밖은 False)"""
    out = np.ones_like(m) if combine is np.logical_and else np.zeros_like(m)
    rows, cols = m.shape
    for di, dj in zip(*np.nonzero(se.mask)):
        di, dj = di - se.reach, dj - se.reach
        shifted = np.zeros_like(m)
        src = m[max(di, 0):rows + min(di, 0), max(dj, 0):cols + min(dj, 0)]
        shifted[max(-di, 0):rows + min(-di, 0), max(-dj, 0):cols + min(-dj, 0)] = src
        out = combine(out, shifted)
    return out


def _brute_erode(m, se):
    return _shift_all(m, se, np.logical_and)


def _brute_dilate(m, se):
    return _shift_all(m, se, np.logical_or)


def _brute_open_close(mask, se):
    """패딩 밖을 배경으로 보는 직접 계산 열림/닫힘"""
    pad = 2 * se.reach + 1
    padded = np.pad(mask, pad, constant_values=False)
    opened = _brute_dilate(_brute_erode(padded, se), se)
    result = _brute_erode(_brute_dilate(opened, se), se)
    return result[pad:-pad, pad:-pad]


def _brute_c4(mask, se):
    """위상마다 True 패딩 후 원판 덮개에 들지 않는 픽셀"""
    pad = 2 * se.reach + 1
    flags = np.zeros_like(mask)
    for phase in (mask, ~mask):
        padded = np.pad(phase, pad, constant_values=True)
        covered = _brute_dilate(_brute_erode(padded, se), se)[pad:-pad, pad:-pad]
        flags |= phase & ~covered
    return flags


def _random_masks(seed, count=50, shape=(32, 32)):
    rng = np.random.default_rng(seed)
    return [rng.random(shape) > rng.uniform(0.3, 0.7) for _ in range(count)]


def test_binarize_threshold():
    grid = np.array([[0.0, 0.49], [0.5, 1.0]])
    np.testing.assert_array_equal(binarize(grid), [[False, False], [True, True]])
    with pytest.raises(ConfigError):
        binarize(grid, threshold=1.0)


def test_structuring_element_shape():
    se = StructuringElement.disk(1.0)
    assert se.reach == 1
    assert se.mask.sum() == 5
    assert StructuringElement.disk(0.4).reach == 0
    with pytest.raises(ConfigError):
        StructuringElement(np.ones((2, 2)))


@pytest.mark.parametrize("radius", [1.0, 1.5, 2.0])
def test_open_close_matches_direct_computation(radius):
    se = StructuringElement.disk(radius)
    assert se.reach == int(radius)
    for mask in _random_masks(7):
        np.testing.assert_array_equal(open_close(mask, se), _brute_open_close(mask, se))


@pytest.mark.parametrize("radius", [1.0, 1.5, 2.0])
def test_c4_matches_direct_computation(radius):
    se = StructuringElement.disk(radius)
    for mask in _random_masks(11):
        np.testing.assert_array_equal(check_c4(mask, se), _brute_c4(mask, se))


def test_open_close_removes_speck_and_fills_hole():
    se = StructuringElement.disk(1.0)
    speck = np.zeros((11, 11), dtype=bool)
    speck[5, 5] = True
    assert not open_close(speck, se).any()

    hole = np.ones((11, 11), dtype=bool)
    hole[5, 5] = False
    assert open_close(hole, se)[5, 5]


def test_c4_flags_isolated_pixel():
    se = StructuringElement.disk(1.0)
    mask = np.zeros((11, 11), dtype=bool)
    mask[5, 5] = True
    flags = check_c4(mask, se)
    assert flags[5, 5]
    assert flags.sum() == 1


def test_c1_near_edge(plate):
    grid = np.zeros((48, 72))
    grid[0, 30] = 1.0
    grid[24, 36] = 1.0
    c1, _, _ = check_c1_c3(grid, plate)
    assert c1[0, 30]
    assert not c1[24, 36]


def test_c2_overshoot(plate):
    grid = np.zeros((48, 72))
    grid[20, 20] = 1.2
    _, c2, _ = check_c1_c3(grid, plate)
    assert c2[20, 20] and c2.sum() == 1


def test_c3_steep_step_on_fine_grid(plate):
    grid = np.zeros((240, 360))
    grid[100:140, 150:210] = 1.0
    _, _, c3 = check_c1_c3(grid, plate)
    assert c3[100, 160] and c3[99, 160]
    assert not c3[120, 180]


def test_flank_profile_monotone(plate):
    profile = FlankProfile.from_config(plate)
    u = np.linspace(0.0, profile.footprint, 200)
    z = profile(u)
    assert z[0] == pytest.approx(0.0, abs=1e-12)
    assert z[-1] == pytest.approx(1.0)
    assert np.all(np.diff(z) >= -1e-12)


def test_postprocess_flat_stays_flat(plate):
    flat = BeadingPattern.flat((48, 72), plate)
    assert not postprocess(flat, plate).grid.any()


def test_postprocess_block(plate):
    grid = np.zeros((48, 72))
    grid[12:36, 18:54] = 1.0
    result = postprocess(BeadingPattern.for_plate(grid, plate), plate)
    assert result.grid[24, 36] == pytest.approx(1.0)
    assert result.grid[2, 2] == 0.0
    assert result.grid.min() >= 0.0 and result.grid.max() <= 1.0
    report = measure_compliance(result, plate)
    assert report.counts()["c1"] == 0
    assert report.counts()["c2"] == 0


def test_postprocess_clears_edge_band(plate):
    result = postprocess(BeadingPattern.for_plate(np.ones((48, 72)), plate), plate)
    assert not result.grid[0].any() and not result.grid[:, -1].any()
    assert result.grid[24, 36] == pytest.approx(1.0)


def test_generated_patterns_are_compliant(plate):
    rng = np.random.default_rng(0)
    violations = total = 0
    for _ in range(100):
        pattern = sample_pattern(rng, GenConfig(), plate)
        report = measure_compliance(pattern, plate)
        violations += int(np.count_nonzero(report.violations))
        total += report.violations.size
    assert 1.0 - violations / total >= 0.998


def test_generated_patterns_compliant_on_fine_grid(plate):
    # 120×180 격자에서는 l_min 이 반지름 1 픽셀 원판이 되어 C4 가 실제로 작동
    rng = np.random.default_rng(1)
    cfg = GenConfig(shape=(120, 180))
    reports = [measure_compliance(sample_pattern(rng, cfg, plate), plate) for _ in range(20)]
    assert structuring_element(np.zeros((120, 180)), plate).reach == 1
    assert np.mean([r.ratio for r in reports]) >= 0.998


def test_postprocess_closes_sub_minimum_gap(plate):
    grid = np.zeros((120, 180))
    grid[30:90, 40:89] = 1.0
    grid[30:90, 90:140] = 1.0
    raw = BeadingPattern.for_plate(grid, plate)
    se = structuring_element(raw, plate)
    assert se.reach == 1
    assert check_c4(binarize(raw), se)[60, 89]

    fixed = postprocess(raw, plate)
    assert fixed.grid[60, 89] >= 0.5
    assert measure_compliance(fixed, plate).ratio > measure_compliance(raw, plate).ratio
    assert measure_compliance(fixed, plate).counts()["c4"] == 0


def _stripe(rows, shape=(240, 360)):
    mask = np.zeros(shape, dtype=bool)
    mask[100:100 + rows, 20:340] = True
    return mask


def test_thin_stripe_flagged_everywhere(plate):
    # 240×360 에서 픽셀 간격 2.5 mm, l_min 10 mm → 반지름 2 픽셀
    se = structuring_element(np.zeros((240, 360)), plate)
    assert se.reach == 2
    stripe = _stripe(2)
    flags = check_c4(stripe, se)
    assert flags[stripe].all()


def test_wide_stripe_survives_open_close(plate):
    se = structuring_element(np.zeros((240, 360)), plate)
    stripe = _stripe(6)
    result = open_close(stripe, se)
    np.testing.assert_array_equal(result[:, 30:330], stripe[:, 30:330])
    assert not check_c4(stripe, se)[100:106, 30:330].any()


def test_thin_stripe_removed_by_open_close(plate):
    se = structuring_element(np.zeros((240, 360)), plate)
    assert not open_close(_stripe(2), se).any()
    assert not open_close(np.zeros((240, 360), dtype=bool), se).any()


def test_postprocess_idempotent_on_generated_patterns(plate):
    rng = np.random.default_rng(3)
    for _ in range(10):
        pattern = sample_pattern(rng, GenConfig(), plate)
        again = postprocess(pattern, plate)
        assert np.abs(again.grid - pattern.grid).max() <= 1.0 / 255.0
