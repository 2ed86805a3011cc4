"""Perspective-transform augmentation applied identically to image pairs."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

__all__ = ["random_perspective_pair"]


def _homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Direct linear transform for 4 point correspondences (maps src -> dst)."""
    a = []
    b = []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    h = np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def random_perspective_pair(a: torch.Tensor, b: torch.Tensor,
                            rng: np.random.Generator,
                            max_disp: float = 0.1) -> tuple[torch.Tensor, torch.Tensor]:
    """Warp two (1, H, W) tensors with one shared random perspective.

    Each corner of the unit square is displaced by up to ``max_disp`` of
    the side length; both images are sampled through the same grid so a
    restoration pair stays aligned.
    """
    if a.shape != b.shape or a.ndim != 3:
        raise ValueError("expected two matching (1,H,W) tensors")
    _, h, w = a.shape
    src = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    dst = src + rng.uniform(-2.0 * max_disp, 2.0 * max_disp, size=(4, 2))
    hom = _homography_from_corners(dst, src)  # output corner -> input coords
    ys, xs = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    ones = np.ones_like(xs)
    pts = np.stack([xs, ys, ones], axis=-1) @ hom.T
    grid = np.stack([pts[..., 0] / pts[..., 2], pts[..., 1] / pts[..., 2]], axis=-1)
    grid_t = torch.from_numpy(grid.astype(np.float32)).unsqueeze(0)
    outs = []
    for img in (a, b):
        warped = F.grid_sample(img.unsqueeze(0), grid_t, mode="bilinear",
                               padding_mode="zeros", align_corners=True)
        outs.append(warped.squeeze(0))
    return outs[0], outs[1]
