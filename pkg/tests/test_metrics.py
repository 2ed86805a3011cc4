import math

import numpy as np
import pytest

from rso_invert.image import ImageGray
from rso_invert.metrics import (DistributionSummary, compare, mse, psnr,
                                psnr_from_mse, ssim, summarize)


def _img(arr):
    return ImageGray(np.asarray(arr, dtype=np.float32))


def _gaussian_window(side=11, sigma=1.5):
    r = np.arange(side) - (side - 1) / 2.0
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_bruteforce(a, b, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Windowed SSIM by direct loops over valid positions (oracle)."""
    win = _gaussian_window(11, sigma)
    x = a.astype(np.float64)
    y = b.astype(np.float64)
    h, w = x.shape
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            px = x[i:i + 11, j:j + 11]
            py = y[i:i + 11, j:j + 11]
            mx = (win * px).sum()
            my = (win * py).sum()
            vx = (win * px * px).sum() - mx * mx
            vy = (win * py * py).sum() - my * my
            cxy = (win * px * py).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_mse_basics():
    a = _img(np.zeros((4, 4)))
    b = _img(np.ones((4, 4)))
    assert mse(a, a) == 0.0
    assert mse(a, b) == 1.0
    assert mse(a, b) == mse(b, a)


def test_mse_dimension_mismatch():
    with pytest.raises(ValueError):
        mse(_img(np.zeros((4, 4))), _img(np.zeros((4, 5))))


def test_psnr_closed_form_exact():
    assert psnr_from_mse(0.01, 1.0) == 20.0


def test_psnr_infinite_on_identical():
    a = _img(np.full((12, 12), 0.3))
    assert math.isinf(psnr(a, a))


def test_psnr_peak_255_convention():
    # 8-bit-peak PSNR of a [0,1]-scale MSE of 8.36e-4 lands at 78.91 dB
    assert abs(psnr_from_mse(8.36e-4, 255.0) - 78.91) < 5e-3
    # the two peak conventions differ by exactly 20*log10(255)
    gap = psnr_from_mse(8.36e-4, 255.0) - psnr_from_mse(8.36e-4, 1.0)
    assert abs(gap - 20 * math.log10(255)) < 1e-12


def test_psnr_monotone_in_mse():
    values = [psnr_from_mse(m, 1.0) for m in (1e-4, 1e-3, 1e-2, 1e-1)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_ssim_self_similarity():
    rng = np.random.default_rng(2)
    a = _img(rng.random((32, 24)))
    assert abs(ssim(a, a) - 1.0) < 1e-9


def test_ssim_matches_bruteforce_random():
    rng = np.random.default_rng(8)
    x = rng.random((16, 20))
    y = np.clip(x + 0.1 * rng.standard_normal((16, 20)), 0, 1)
    a, b = _img(x), _img(y)
    got = ssim(a, b)
    want = ssim_bruteforce(a.data, b.data)
    assert abs(got - want) < 1e-9


def test_ssim_checkerboard_inversion_strongly_dissimilar():
    board = np.indices((16, 16)).sum(axis=0) % 2
    a = _img(board.astype(np.float32))
    b = _img(1.0 - board.astype(np.float32))
    got = ssim(a, b)
    want = ssim_bruteforce(a.data, b.data)
    assert abs(got - want) < 1e-9
    assert got < 0.5


def test_ssim_bounds():
    rng = np.random.default_rng(12)
    for _ in range(10):
        a = _img(rng.random((16, 16)))
        b = _img(rng.random((16, 16)))
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0


def test_ssim_too_small_rejected():
    with pytest.raises(ValueError):
        ssim(_img(np.zeros((8, 8))), _img(np.zeros((8, 8))))


def test_compare_report_fields():
    a = _img(np.zeros((16, 16)))
    rep = compare(a, a)
    assert rep.mse == 0.0 and math.isinf(rep.psnr) and abs(rep.ssim - 1) < 1e-9
    assert rep.peak == 1.0


def test_summarize_inclusive_quartiles():
    s = summarize([1, 2, 3, 4, 5])
    assert s.q1 == 2 and s.median == 3 and s.q3 == 4
    assert s.min == 1 and s.max == 5


def test_summarize_single_value():
    s = summarize([7.0])
    assert s.mean == s.min == s.max == s.q1 == s.median == s.q3 == 7.0
    assert s.std == 0.0


def test_summarize_degenerate_kde_is_none():
    s = summarize([7.0, 7.0, 7.0], with_kde=True)
    assert s.kde_points is None


def test_summarize_empty_rejected():
    with pytest.raises(ValueError):
        summarize([])


def test_summarize_permutation_invariant():
    rng = np.random.default_rng(4)
    vals = list(rng.random(31))
    s1 = summarize(vals)
    s2 = summarize(list(reversed(vals)))
    assert s1 == s2


def test_kde_integrates_to_one():
    rng = np.random.default_rng(5)
    vals = list(rng.standard_normal(400) * 2.0 + 1.0)
    s = summarize(vals, with_kde=True)
    xs = np.array([p[0] for p in s.kde_points])
    ds = np.array([p[1] for p in s.kde_points])
    integral = np.trapezoid(ds, xs)
    assert abs(integral - 1.0) <= 0.02
