"""Matrix-free periodic convolution operator and its adjoint.

Realizes the (width*height) x (width*height) blur matrix implicitly
through cached frequency-domain kernel transforms. Vectors are flattened
row-major images in float64; the flattening order is part of the file
contract for reproducibility.
"""

from __future__ import annotations

import numpy as np

from .image import ImageGray

__all__ = ["ConvOperator", "make_operator"]


class ConvOperator:
    """Square linear operator A (and A^T) for periodic convolution."""

    def __init__(self, kernel: ImageGray, width: int, height: int):
        if width < 1 or height < 1:
            raise ValueError(f"operator dimensions must be positive, got {width}x{height}")
        kh, kw = kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel must be odd-sided, got {kh}x{kw}")
        if kh > height or kw > width:
            raise ValueError(f"kernel {kh}x{kw} larger than image {width}x{height}")
        self.width = width
        self.height = height
        pad = np.zeros((height, width), dtype=np.float64)
        ys = (np.arange(kh) - kh // 2) % height
        xs = (np.arange(kw) - kw // 2) % width
        pad[np.ix_(ys, xs)] = kernel.data.astype(np.float64)
        self.kernel_hat = np.fft.rfft2(pad)
        self.kernel_hat.flags.writeable = False

    @property
    def n(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"vector length {x.shape} does not match operator n={self.n}")
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A @ x via frequency-domain multiply."""
        x = self._check(x)
        out = np.fft.irfft2(
            np.fft.rfft2(x.reshape(self.height, self.width)) * self.kernel_hat,
            s=(self.height, self.width),
        )
        return out.reshape(-1)

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """A^T @ y: multiply by the conjugate transform, i.e. convolve with
        the point-reflected kernel."""
        y = self._check(y)
        out = np.fft.irfft2(
            np.fft.rfft2(y.reshape(self.height, self.width)) * np.conj(self.kernel_hat),
            s=(self.height, self.width),
        )
        return out.reshape(-1)


def make_operator(kernel: ImageGray, width: int, height: int) -> ConvOperator:
    """Build the implicit convolution operator for a width x height domain."""
    return ConvOperator(kernel, width, height)
