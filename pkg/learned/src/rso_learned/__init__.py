"""Learned restoration (U-Net) and rotation regression for degraded RSO
imagery datasets produced by the companion synthesis/deconvolution toolkit."""

from .io import ManifestData, ManifestRecord, read_image, read_manifest, write_imf
from .unet import UNet, UNetConfig, build_unet
from .optim import Lookahead
from .pose import (PoseModel, build_backbone, build_pose_head, geodesic_angle,
                   geodesic_loss, svd_orthogonalize)
from .train import (PoseResult, RestoreResult, TrainConfig, restore_images,
                    train_pose, train_restore, write_predictions_csv)

__version__ = "0.1.0"
