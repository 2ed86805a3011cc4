"""Rotation regression: frozen feature backbone, small FC head, and a
differentiable SVD-orthogonalization output layer.

The head emits 9 numbers reshaped to 3x3 and projected to the nearest
proper rotation, so every prediction satisfies R^T R = I with det +1 by
construction. The sign branch uses det(U V^T) computed after the SVD,
matching the evaluation-side convention.
"""

from __future__ import annotations

import torch
import torch.nn as nn

__all__ = ["svd_orthogonalize", "geodesic_angle", "geodesic_loss",
           "build_backbone", "build_pose_head", "PoseModel"]


def svd_orthogonalize(m: torch.Tensor) -> torch.Tensor:
    """Project a batch of 3x3 matrices to the Frobenius-nearest rotations."""
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (...,3,3), got {tuple(m.shape)}")
    u, _, vh = torch.linalg.svd(m)
    det = torch.det(u @ vh)
    d = torch.ones(*m.shape[:-2], 3, dtype=m.dtype, device=m.device)
    d[..., 2] = torch.sign(det)
    return u @ (d.unsqueeze(-1) * vh)


def geodesic_angle(r1: torch.Tensor, r2: torch.Tensor,
                   eps: float = 1e-7) -> torch.Tensor:
    """Per-sample rotation angle of r1^T r2 in [0, pi].

    The cosine is clamped inside (-1, 1) by ``eps`` so the gradient stays
    finite at the endpoints during training.
    """
    m = r1.transpose(-2, -1) @ r2
    tr = m.diagonal(dim1=-2, dim2=-1).sum(-1)
    cos = ((tr - 1.0) / 2.0).clamp(-1.0 + eps, 1.0 - eps)
    return torch.acos(cos)


def geodesic_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    return geodesic_angle(pred, truth).mean()


class TinyBackbone(nn.Module):
    """Small frozen convolutional feature extractor with deterministic init.

    Stands in for a pretrained network where downloaded weights are not
    available; the fixed random filters act as a feature basis and only
    the head is trained.
    """

    def __init__(self, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(1, 16, 5, stride=2, padding=2), nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(4),
            nn.Flatten(),
        )
        with torch.no_grad():
            for p in self.net.parameters():
                if p.ndim > 1:
                    nn.init.kaiming_normal_(p, generator=gen)
                else:
                    p.zero_()
        self.feature_dim = 64 * 4 * 4
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        return super().train(False)  # frozen: always eval

    def forward(self, x):
        return self.net(x)


def build_backbone(kind: str = "tiny", seed: int = 0) -> nn.Module:
    """Frozen feature extractor. 'resnet50' uses torchvision ImageNet
    weights when retrievable; 'tiny' is the self-contained default."""
    if kind == "tiny":
        return TinyBackbone(seed=seed)
    if kind == "resnet50":
        import torchvision

        model = torchvision.models.resnet50(
            weights=torchvision.models.ResNet50_Weights.IMAGENET1K_V2)
        model.fc = nn.Identity()

        class GrayResNet(nn.Module):
            feature_dim = 2048

            def __init__(self, net):
                super().__init__()
                self.net = net
                for p in self.parameters():
                    p.requires_grad_(False)
                self.eval()

            def train(self, mode: bool = True):
                return super().train(False)

            def forward(self, x):
                return self.net(x.repeat(1, 3, 1, 1))

        return GrayResNet(model)
    raise ValueError(f"unknown backbone kind {kind!r}")


class PoseHead(nn.Module):
    """FC 384 -> FC 96 -> FC 9, reshaped and SVD-orthogonalized."""

    def __init__(self, feature_dim: int):
        super().__init__()
        if feature_dim < 1:
            raise ValueError(f"feature_dim must be positive, got {feature_dim}")
        self.fc = nn.Sequential(
            nn.Linear(feature_dim, 384), nn.ReLU(inplace=True),
            nn.Linear(384, 96), nn.ReLU(inplace=True),
            nn.Linear(96, 9),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        nine = self.fc(features)
        return svd_orthogonalize(nine.view(-1, 3, 3))


def build_pose_head(feature_dim: int) -> PoseHead:
    return PoseHead(feature_dim)


class PoseModel(nn.Module):
    def __init__(self, backbone: nn.Module, head: PoseHead):
        super().__init__()
        self.backbone = backbone
        self.head = head

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))
