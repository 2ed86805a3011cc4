"""Image-recovery quality metrics and distribution summaries.

MSE / PSNR / SSIM operate on pairs of equally sized images; ``summarize``
turns a list of per-image metric values into box-plot quartiles and an
optional Gaussian KDE suitable for violin plots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .image import ImageGray

__all__ = ["MetricReport", "DistributionSummary", "mse", "psnr", "psnr_from_mse",
           "ssim", "summarize", "compare"]


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float
    ssim: float
    peak: float


@dataclass(frozen=True)
class DistributionSummary:
    mean: float
    std: float
    min: float
    q1: float
    median: float
    q3: float
    max: float
    kde_points: list[tuple[float, float]] | None = field(default=None)


def _check_dims(a: ImageGray, b: ImageGray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")


def mse(a: ImageGray, b: ImageGray) -> float:
    """Mean over pixels of the squared intensity difference."""
    _check_dims(a, b)
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(err: float, peak: float = 1.0) -> float:
    """10*log10(peak^2 / mse) in dB; +inf when mse is 0."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    if err < 0:
        raise ValueError(f"mse must be nonnegative, got {err}")
    if err == 0.0:
        return math.inf
    return 10.0 * (2.0 * math.log10(peak) - math.log10(err))


def psnr(a: ImageGray, b: ImageGray, peak: float = 1.0) -> float:
    return psnr_from_mse(mse(a, b), peak)


def _gaussian_window(side: int, sigma: float) -> np.ndarray:
    r = np.arange(side) - (side - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: ImageGray, b: ImageGray, window_sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window.

    Local means, variances, and covariance are Gaussian-weighted; the SSIM
    map is averaged over valid (fully interior) window positions only, so
    image sides must be at least 11.
    """
    _check_dims(a, b)
    side = 11
    if min(a.shape) < side:
        raise ValueError(f"images must be at least {side}x{side} for SSIM, got {a.shape}")
    win = _gaussian_window(side, window_sigma)
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)

    def filt(z):
        return fftconvolve(z, win, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    xx = filt(x * x) - mu_x * mu_x
    yy = filt(y * y) - mu_y * mu_y
    xy = filt(x * y) - mu_x * mu_y
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def compare(a: ImageGray, b: ImageGray, peak: float = 1.0) -> MetricReport:
    """All three metrics for one image pair."""
    e = mse(a, b)
    return MetricReport(mse=e, psnr=psnr_from_mse(e, peak), ssim=ssim(a, b), peak=peak)


def summarize(values: list[float], with_kde: bool = False) -> DistributionSummary:
    """Quartiles by inclusive linear interpolation plus optional Gaussian KDE.

    KDE bandwidth follows Silverman's rule of thumb,
    h = 0.9 * min(std, IQR/1.34) * n^(-1/5), evaluated at 128 points over
    [min - 3h, max + 3h]. Degenerate (zero-spread) inputs get no KDE.
    """
    if len(values) == 0:
        raise ValueError("summarize requires at least one value")
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("summarize requires finite values")
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75], method="linear")
    kde = None
    if with_kde:
        kde = _gaussian_kde(arr)
    return DistributionSummary(
        mean=float(arr.mean()), std=float(arr.std()),
        min=float(arr.min()), q1=float(q1), median=float(med), q3=float(q3),
        max=float(arr.max()), kde_points=kde,
    )


def _gaussian_kde(arr: np.ndarray, points: int = 128) -> list[tuple[float, float]] | None:
    n = arr.size
    std = float(arr.std())
    q1, q3 = np.quantile(arr, [0.25, 0.75], method="linear")
    iqr = float(q3 - q1)
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    if spread <= 0:
        return None
    h = 0.9 * spread * n ** (-0.2)
    grid = np.linspace(arr.min() - 3.0 * h, arr.max() + 3.0 * h, points)
    z = (grid[:, None] - arr[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (n * h * math.sqrt(2.0 * math.pi))
    return [(float(g), float(d)) for g, d in zip(grid, dens)]
