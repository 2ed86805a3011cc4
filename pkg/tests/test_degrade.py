import numpy as np
import pytest

from rso_invert.degrade import (DegradeConfig, bloom, convolve, degrade,
                                gaussian_kernel)
from rso_invert.image import ImageGray


def _img(arr):
    return ImageGray(np.asarray(arr, dtype=np.float32))


def delta_kernel(side=3):
    k = np.zeros((side, side), dtype=np.float32)
    k[side // 2, side // 2] = 1.0
    return ImageGray(k)


def convolve_bruteforce(img, kernel):
    """Direct double sum with periodic indexing (oracle)."""
    h, w = img.shape
    kh, kw = kernel.shape
    out = np.zeros((h, w))
    x = img.astype(np.float64)
    k = kernel.astype(np.float64)
    for m in range(h):
        for n in range(w):
            acc = 0.0
            for j in range(kh):
                for i in range(kw):
                    dy = j - kh // 2
                    dx = i - kw // 2
                    acc += k[j, i] * x[(m - dy) % h, (n - dx) % w]
            out[m, n] = acc
    return out


def test_convolve_delta_identity():
    rng = np.random.default_rng(0)
    img = _img(rng.random((12, 10)))
    out = convolve(img, delta_kernel())
    np.testing.assert_allclose(out.data, img.data, atol=1e-7)


def test_convolve_dc_preservation():
    img = ImageGray(np.full((16, 16), 0.42, dtype=np.float32))
    out = convolve(img, gaussian_kernel(1.2, 7))
    np.testing.assert_allclose(out.data, 0.42, atol=1e-6)


def test_convolve_matches_bruteforce():
    rng = np.random.default_rng(1)
    img = _img(rng.random((8, 8)))
    k = rng.random((3, 3))
    kernel = ImageGray((k / k.sum()).astype(np.float32))
    out = convolve(img, kernel)
    want = convolve_bruteforce(img.data, kernel.data)
    np.testing.assert_allclose(out.data, want, atol=1e-6)


def test_convolve_linearity():
    rng = np.random.default_rng(2)
    x = _img(rng.random((10, 10)))
    y = _img(rng.random((10, 10)))
    kernel = gaussian_kernel(1.0, 5)
    lhs = convolve(ImageGray(2.0 * x.data + 0.5 * y.data), kernel)
    rhs = 2.0 * convolve(x, kernel).data + 0.5 * convolve(y, kernel).data
    np.testing.assert_allclose(lhs.data, rhs, atol=1e-6)


def test_convolve_rejects_bad_kernels():
    img = _img(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        convolve(img, ImageGray(np.full((2, 2), 0.25, dtype=np.float32)))
    big = ImageGray(np.full((9, 9), 1 / 81, dtype=np.float32))
    with pytest.raises(ValueError):
        convolve(img, big)


def test_bloom_noop_cases():
    rng = np.random.default_rng(3)
    img = _img(0.5 * rng.random((12, 12)))
    out = bloom(img, threshold=0.8, sigma=2.0, strength=0.0)
    np.testing.assert_array_equal(out.data, img.data)
    out = bloom(img, threshold=0.9, sigma=2.0, strength=1.5)
    np.testing.assert_array_equal(out.data, img.data)  # nothing above threshold


def test_bloom_energy_conservation():
    data = np.zeros((32, 32), dtype=np.float32)
    data[16, 16] = 1.0
    img = ImageGray(data)
    threshold, strength = 0.4, 0.7
    out = bloom(img, threshold=threshold, sigma=3.0, strength=strength)
    added = out.data.astype(np.float64).sum() - img.data.astype(np.float64).sum()
    assert abs(added - strength * (1.0 - threshold)) < 1e-6


def test_bloom_negative_strength_rejected():
    with pytest.raises(ValueError):
        bloom(_img(np.zeros((8, 8))), 0.5, 1.0, -1.0)


def test_degrade_pure_forward_when_disabled():
    rng = np.random.default_rng(4)
    img = _img(rng.random((16, 16)))
    kernel = gaussian_kernel(1.0, 5)
    cfg = DegradeConfig(kernel=kernel, noise_sigma=0.0, background_level=0.0,
                        bloom_strength=0.0, seed=9)
    out, rec = degrade(img, cfg)
    np.testing.assert_array_equal(out.data, convolve(img, kernel).data)
    assert rec.noise_norm == 0.0


def test_degrade_background_norm():
    img = ImageGray(np.zeros((20, 20), dtype=np.float32))
    cfg = DegradeConfig(kernel=delta_kernel(), noise_sigma=0.0,
                        background_level=0.1, seed=1)
    out, rec = degrade(img, cfg)
    assert abs(rec.noise_norm - 0.1 * 20) < 1e-12  # 0.1 * sqrt(400)
    np.testing.assert_allclose(out.data, 0.1, atol=1e-7)


def test_degrade_deterministic():
    rng = np.random.default_rng(5)
    img = _img(rng.random((16, 16)))
    cfg = DegradeConfig(kernel=gaussian_kernel(1.5, 7), noise_sigma=0.02,
                        background_level=0.05, bloom_strength=0.3,
                        bloom_threshold=0.5, bloom_sigma=2.0, seed=77)
    out1, rec1 = degrade(img, cfg)
    out2, rec2 = degrade(img, cfg)
    assert out1.data.tobytes() == out2.data.tobytes()
    assert rec1 == rec2


def test_degrade_seed_changes_noise():
    img = ImageGray(np.zeros((16, 16), dtype=np.float32))
    base = dict(kernel=delta_kernel(), noise_sigma=0.02, background_level=0.0)
    out1, _ = degrade(img, DegradeConfig(seed=1, **base))
    out2, _ = degrade(img, DegradeConfig(seed=2, **base))
    assert out1.data.tobytes() != out2.data.tobytes()


def test_degrade_noise_sigma_empirical():
    img = ImageGray(np.zeros((128, 128), dtype=np.float32))
    sigma = 0.05
    cfg = DegradeConfig(kernel=delta_kernel(), noise_sigma=sigma,
                        background_level=0.0, seed=123)
    out, rec = degrade(img, cfg)
    sample_std = float(out.data.astype(np.float64).std())
    assert abs(sample_std - sigma) / sigma < 0.05
    # noise norm should match sigma * sqrt(N) closely for 16k samples
    assert abs(rec.noise_norm - sigma * 128) / (sigma * 128) < 0.05


def test_degrade_record_zero_norm_iff_disabled():
    img = ImageGray(np.zeros((8, 8), dtype=np.float32))
    _, rec = degrade(img, DegradeConfig(kernel=delta_kernel(), noise_sigma=0.0,
                                        background_level=0.0, seed=0))
    assert rec.noise_norm == 0.0
    _, rec = degrade(img, DegradeConfig(kernel=delta_kernel(), noise_sigma=1e-4,
                                        background_level=0.0, seed=0))
    assert rec.noise_norm > 0.0


def test_config_json_roundtrip():
    cfg = DegradeConfig(kernel=gaussian_kernel(1.5, 7), noise_sigma=0.02,
                        background_level=0.05, bloom_strength=0.3,
                        bloom_threshold=0.5, bloom_sigma=2.0, seed=77)
    back = DegradeConfig.from_json_dict(cfg.to_json_dict())
    assert back.hash64() == cfg.hash64()
    assert back.seed == cfg.seed
    np.testing.assert_array_equal(back.kernel.data, cfg.kernel.data)


def test_config_validation():
    bad = np.full((3, 3), 0.2, dtype=np.float32)  # sums to 1.8
    with pytest.raises(ValueError):
        DegradeConfig(kernel=ImageGray(bad))
    with pytest.raises(ValueError):
        DegradeConfig(kernel=delta_kernel(), noise_sigma=-0.1)
    with pytest.raises(ValueError):
        DegradeConfig(kernel=delta_kernel(), bloom_threshold=1.5)
