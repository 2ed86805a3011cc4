"""Emulated telescope degradation: PSF blur, bloom, background, and noise.

The pipeline turns a clean render into an observation
``b = A @ b_true + e`` where A is periodic convolution with the detector
kernel and e collects the constant background plus per-pixel Gaussian
noise. The l2 norm of e is recorded per sample because it is exactly the
noise-level input the discrepancy-principle solvers need.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .image import ImageGray, fnv1a64

__all__ = ["DegradeConfig", "DegradeRecord", "convolve", "bloom", "degrade",
           "gaussian_kernel"]


def _centered_pad(kernel: np.ndarray, h: int, w: int) -> np.ndarray:
    """Zero-pad an odd-sided kernel to (h, w) with its center wrapped to (0, 0)."""
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel must be odd-sided, got {kh}x{kw}")
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than image {h}x{w}")
    pad = np.zeros((h, w), dtype=np.float64)
    ys = (np.arange(kh) - kh // 2) % h
    xs = (np.arange(kw) - kw // 2) % w
    pad[np.ix_(ys, xs)] = kernel
    return pad


def _fft_convolve(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    h, w = data.shape
    pad = _centered_pad(kernel, h, w)
    return np.fft.irfft2(np.fft.rfft2(data) * np.fft.rfft2(pad), s=(h, w))


def convolve(img: ImageGray, kernel: ImageGray, boundary: str = "periodic") -> ImageGray:
    """Circular convolution of the image with an odd-sided kernel.

    Computed in the frequency domain with the kernel zero-padded to the
    image size and centered at the origin. Periodic is the only boundary
    mode; it keeps the operator square.
    """
    if boundary != "periodic":
        raise ValueError(f"unsupported boundary {boundary!r}")
    out = _fft_convolve(img.data.astype(np.float64), kernel.data.astype(np.float64))
    return ImageGray(out.astype(np.float32))


def gaussian_kernel(sigma: float, side: int | None = None) -> ImageGray:
    """Odd-sided normalized Gaussian kernel (side defaults to ~6 sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if side is None:
        side = max(3, int(2 * np.ceil(3.0 * sigma) + 1))
    if side % 2 == 0:
        raise ValueError(f"kernel side must be odd, got {side}")
    r = np.arange(side) - side // 2
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return ImageGray((k / k.sum()).astype(np.float32))


def _wrapped_gaussian(h: int, w: int, sigma: float) -> np.ndarray:
    """Periodic Gaussian on the full image grid, normalized to sum 1."""
    dy = np.minimum(np.arange(h), h - np.arange(h)).astype(np.float64)
    dx = np.minimum(np.arange(w), w - np.arange(w)).astype(np.float64)
    g = np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def bloom(img: ImageGray, threshold: float, sigma: float, strength: float) -> ImageGray:
    """Add thresholded glow: img + strength * G_sigma(max(img - threshold, 0)).

    The blur is a normalized periodic Gaussian, so the added energy equals
    strength times the thresholded excess. No clamping is applied here;
    clamping happens only at quantized export.
    """
    if strength < 0:
        raise ValueError(f"bloom strength must be >= 0, got {strength}")
    if strength == 0.0:
        return img
    if sigma <= 0:
        raise ValueError(f"bloom sigma must be positive, got {sigma}")
    data = img.data.astype(np.float64)
    excess = np.maximum(data - threshold, 0.0)
    if not excess.any():
        return img
    h, w = img.shape
    glow = np.fft.irfft2(np.fft.rfft2(excess) * np.fft.rfft2(_wrapped_gaussian(h, w, sigma)),
                         s=(h, w))
    return ImageGray((data + strength * glow).astype(np.float32))


@dataclass(frozen=True)
class DegradeConfig:
    """Full parameterization of the degradation pipeline, JSON-serializable."""

    kernel: ImageGray
    bloom_threshold: float = 0.8
    bloom_sigma: float = 3.0
    bloom_strength: float = 0.0
    noise_sigma: float = 0.01
    background_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        k = self.kernel.data
        if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ValueError("degradation kernel must be odd-sided")
        if np.any(k < 0):
            raise ValueError("degradation kernel must be nonnegative")
        if abs(float(k.sum()) - 1.0) > 1e-6:
            raise ValueError(f"degradation kernel must sum to 1, got {float(k.sum())!r}")
        for name, lo in (("bloom_threshold", 0.0), ("bloom_sigma", 0.0),
                         ("bloom_strength", 0.0), ("noise_sigma", 0.0),
                         ("background_level", 0.0)):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < lo:
                raise ValueError(f"{name} must be finite and >= {lo}, got {v}")
        if self.bloom_threshold > 1.0:
            raise ValueError(f"bloom_threshold must be in [0,1], got {self.bloom_threshold}")
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def to_json_dict(self) -> dict:
        return {
            "kernel": {
                "w": self.kernel.width,
                "h": self.kernel.height,
                "values": [float(v) for v in self.kernel.data.reshape(-1)],
            },
            "bloom_threshold": float(self.bloom_threshold),
            "bloom_sigma": float(self.bloom_sigma),
            "bloom_strength": float(self.bloom_strength),
            "noise_sigma": float(self.noise_sigma),
            "background_level": float(self.background_level),
            "seed": int(self.seed),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DegradeConfig":
        k = d["kernel"]
        data = np.asarray(k["values"], dtype=np.float32).reshape(k["h"], k["w"])
        return cls(
            kernel=ImageGray(data),
            bloom_threshold=d["bloom_threshold"],
            bloom_sigma=d["bloom_sigma"],
            bloom_strength=d["bloom_strength"],
            noise_sigma=d["noise_sigma"],
            background_level=d["background_level"],
            seed=d["seed"],
        )

    def hash64(self) -> int:
        payload = json.dumps(self.to_json_dict(), separators=(",", ":")).encode("utf-8")
        return fnv1a64(payload)

    def with_seed(self, seed: int) -> "DegradeConfig":
        return DegradeConfig(
            kernel=self.kernel,
            bloom_threshold=self.bloom_threshold,
            bloom_sigma=self.bloom_sigma,
            bloom_strength=self.bloom_strength,
            noise_sigma=self.noise_sigma,
            background_level=self.background_level,
            seed=seed,
        )


@dataclass(frozen=True)
class DegradeRecord:
    """Per-sample degradation provenance: the noise norm is the solver's delta."""

    noise_norm: float
    config_hash: int
    seed: int


def _counter_noise(n: int, sigma: float, seed: int) -> np.ndarray:
    """Standard-normal noise from a counter-based stream.

    One Philox draw per pixel mapped through the normal quantile, so the
    value at index i depends only on (seed, i); generation order and
    parallel chunking cannot change the stream.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    u = (rng.integers(0, 1 << 53, size=n, dtype=np.uint64).astype(np.float64) + 0.5) / (1 << 53)
    return sigma * ndtri(u)


def degrade(img: ImageGray, cfg: DegradeConfig) -> tuple[ImageGray, DegradeRecord]:
    """Run blur -> bloom -> background -> noise; record the injected noise norm.

    noise_norm is the l2 norm of (background_level + noise), i.e. of every
    additive term outside the convolution. Identical (img, cfg) inputs
    always produce bitwise-identical outputs.
    """
    out = convolve(img, cfg.kernel)
    if cfg.bloom_strength > 0:
        out = bloom(out, cfg.bloom_threshold, cfg.bloom_sigma, cfg.bloom_strength)
    n = img.width * img.height
    if cfg.noise_sigma > 0:
        e = cfg.background_level + _counter_noise(n, cfg.noise_sigma, cfg.seed)
    else:
        e = np.full(n, cfg.background_level, dtype=np.float64)
    noise_norm = float(np.linalg.norm(e))
    if cfg.noise_sigma > 0 or cfg.background_level > 0:
        data = (out.data.astype(np.float64) + e.reshape(img.shape)).astype(np.float32)
        out = ImageGray(data)
    return out, DegradeRecord(noise_norm=noise_norm, config_hash=cfg.hash64(), seed=cfg.seed)
