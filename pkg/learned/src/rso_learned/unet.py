"""U-Net for image restoration with wrap-around padding on odd dimensions.

Encoder levels halve the spatial dims with floor division, so odd inputs
(e.g. height 135) lose a row; the matching decoder level upsamples to an
even size and circularly pads back to the skip connection's shape before
concatenating.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["UNetConfig", "UNet", "build_unet"]


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_channels: int = 16

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")


class ConvBlock(nn.Module):
    """Two rounds of 3x3 conv + batch norm + ReLU."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, 3, padding=1),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class UNet(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        ch = [cfg.base_channels * (2 ** i) for i in range(cfg.depth + 1)]
        self.encoders = nn.ModuleList()
        c_prev = 1
        for c in ch[:-1]:
            self.encoders.append(ConvBlock(c_prev, c))
            c_prev = c
        self.bottleneck = ConvBlock(ch[-2], ch[-1])
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for c_hi, c_lo in zip(ch[:0:-1], ch[-2::-1]):
            self.upsamplers.append(nn.ConvTranspose2d(c_hi, c_lo, 2, stride=2))
            self.decoders.append(ConvBlock(2 * c_lo, c_lo))
        self.head = nn.Conv2d(ch[0], 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (B,1,H,W) input, got {tuple(x.shape)}")
        if min(x.shape[-2:]) < 2 ** self.cfg.depth:
            raise ValueError(
                f"input {tuple(x.shape[-2:])} too small for depth {self.cfg.depth}")
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = up(x)
            dh = skip.shape[-2] - x.shape[-2]
            dw = skip.shape[-1] - x.shape[-1]
            if dh or dw:
                # odd encoder dims: restore the lost row/column by wrapping
                x = F.pad(x, (0, dw, 0, dh), mode="circular")
            x = dec(torch.cat([skip, x], dim=1))
        return self.head(x)


def build_unet(cfg: UNetConfig | None = None) -> UNet:
    return UNet(cfg or UNetConfig())
