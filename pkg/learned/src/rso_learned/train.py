"""Training loops: U-Net restoration on degraded/clean pairs, and rotation
regression on manifest-labeled images.

Both consume ``manifest.jsonl`` datasets. Restoration minimizes pixel MSE;
pose regression minimizes the geodesic angle between the predicted and
labeled rotations, and emits a predictions CSV (``id,m00..m22``) that the
evaluation CLI ingests directly. Runs are reproducible given the seed and
a fixed torch thread count.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
import torch

from .augment import random_perspective_pair
from .io import ManifestData, ManifestRecord, read_image, read_manifest, write_imf
from .optim import Lookahead
from .pose import PoseModel, build_backbone, build_pose_head, geodesic_angle, geodesic_loss
from .unet import UNet, UNetConfig, build_unet

__all__ = ["TrainConfig", "RestoreResult", "PoseResult", "train_restore",
           "restore_images", "train_pose", "write_predictions_csv"]


@dataclass(frozen=True)
class TrainConfig:
    lr_restore: float = 1e-3
    lr_pose: float = 1e-4
    lookahead_steps: int = 6
    augment: bool = False
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    base_channels: int = 16
    depth: int = 4
    backbone: str = "tiny"

    def __post_init__(self):
        if self.lr_restore <= 0 or self.lr_pose <= 0:
            raise ValueError("learning rates must be positive")
        if self.lookahead_steps < 1:
            raise ValueError("lookahead_steps must be >= 1")


@dataclass
class RestoreResult:
    model: UNet
    history: list[tuple[int, float, float]]   # (epoch, train_loss, val_loss)
    baseline_val_mse: float                   # degraded-vs-clean on val split
    final_val_mse: float


@dataclass
class PoseResult:
    model: PoseModel
    history: list[tuple[int, float, float]]
    eval_ids: list[str]
    eval_mean_error: float                    # geodesic radians
    eval_matrix_mse: float                    # elementwise secondary metric


def _resolve(manifest: ManifestData, rec: ManifestRecord, restored_dir: str | None):
    degraded = os.path.join(manifest.base_dir, rec.degraded_path)
    if restored_dir is not None:
        candidate = os.path.join(restored_dir, rec.id + ".imf")
        if not os.path.exists(candidate):
            raise FileNotFoundError(f"no restored image for {rec.id} in {restored_dir}")
        degraded = candidate
    clean = os.path.join(manifest.base_dir, rec.clean_path)
    return degraded, clean


def _load_pairs(manifest: ManifestData, records: list[ManifestRecord],
                restored_dir: str | None = None):
    xs, ys = [], []
    for rec in records:
        dpath, cpath = _resolve(manifest, rec, restored_dir)
        xs.append(torch.from_numpy(read_image(dpath)).unsqueeze(0))
        ys.append(torch.from_numpy(read_image(cpath)).unsqueeze(0))
    return torch.stack(xs), torch.stack(ys)


def _require_split(manifest: ManifestData):
    train = manifest.with_split("train")
    val = manifest.with_split("val")
    if not train or not val:
        raise ValueError("manifest needs train/val split tags; run the dataset "
                         "split step first")
    return train, val


def _write_history(history, path):
    if path is None:
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for row in history:
            w.writerow([row[0], repr(row[1]), repr(row[2])])


def train_restore(manifest_path: str, cfg: TrainConfig,
                  checkpoint_path: str | None = None,
                  log_path: str | None = None,
                  source_dir: str | None = None) -> RestoreResult:
    """Train the restoration U-Net on the manifest's train split.

    Minimizes pixel MSE between restored degraded images and their clean
    counterparts; validation MSE per epoch goes to the metrics log.
    ``source_dir`` substitutes preprocessed inputs (e.g. deconvolved
    images named <id>.imf) for the manifest's degraded files, which is how
    the deconvolve-then-learn variant is trained.
    """
    torch.manual_seed(cfg.seed)
    manifest = read_manifest(manifest_path)
    train_recs, val_recs = _require_split(manifest)
    x_train, y_train = _load_pairs(manifest, train_recs, source_dir)
    x_val, y_val = _load_pairs(manifest, val_recs, source_dir)
    baseline = float(torch.mean((x_val - y_val) ** 2))

    model = build_unet(UNetConfig(depth=cfg.depth, base_channels=cfg.base_channels))
    opt = Lookahead(torch.optim.Adam(model.parameters(), lr=cfg.lr_restore),
                    k=cfg.lookahead_steps)
    aug_rng = np.random.default_rng(cfg.seed)
    n = x_train.shape[0]
    history = []
    val_mse = baseline
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = torch.randperm(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            if cfg.augment:
                pairs = [random_perspective_pair(xb[i], yb[i], aug_rng)
                         for i in range(xb.shape[0])]
                xb = torch.stack([p[0] for p in pairs])
                yb = torch.stack([p[1] for p in pairs])
            opt.zero_grad()
            loss = torch.mean((model(xb) - yb) ** 2)
            loss.backward()
            opt.step()
            total += loss.item() * xb.shape[0]
        model.eval()
        with torch.no_grad():
            val_mse = float(torch.mean((model(x_val) - y_val) ** 2))
        history.append((epoch, total / n, val_mse))
    _write_history(history, log_path)
    if checkpoint_path:
        torch.save({"config": cfg, "state_dict": model.state_dict()}, checkpoint_path)
    return RestoreResult(model=model, history=history,
                         baseline_val_mse=baseline, final_val_mse=val_mse)


def restore_images(model: UNet, manifest_path: str, out_dir: str,
                   records: list[ManifestRecord] | None = None,
                   source_dir: str | None = None) -> None:
    """Run the restoration net over dataset images and write IMF outputs
    named <id>.imf (the layout train_pose's restored_dir expects)."""
    manifest = read_manifest(manifest_path)
    os.makedirs(out_dir, exist_ok=True)
    model.eval()
    for rec in records if records is not None else manifest.records:
        dpath, _ = _resolve(manifest, rec, source_dir)
        x = torch.from_numpy(read_image(dpath)).unsqueeze(0).unsqueeze(0)
        with torch.no_grad():
            y = model(x)[0, 0].numpy()
        write_imf(y, os.path.join(out_dir, rec.id + ".imf"))


def train_pose(manifest_path: str, cfg: TrainConfig,
               restored_dir: str | None = None,
               predictions_path: str | None = None,
               log_path: str | None = None,
               eval_split: str = "test") -> PoseResult:
    """Train the rotation regressor and emit predictions for evaluation.

    ``restored_dir`` switches the image source from the manifest's
    degraded files to restored outputs, enabling the recovery-method
    comparisons. Predictions for the eval split are written in the
    ``id,m00..m22`` CSV format.
    """
    torch.manual_seed(cfg.seed)
    manifest = read_manifest(manifest_path)
    train_recs, val_recs = _require_split(manifest)
    eval_recs = manifest.with_split(eval_split) or val_recs

    def load(records):
        xs, rots = [], []
        for rec in records:
            dpath, _ = _resolve(manifest, rec, restored_dir)
            xs.append(torch.from_numpy(read_image(dpath)).unsqueeze(0))
            rots.append(torch.tensor(rec.rotation, dtype=torch.float32).view(3, 3))
        return torch.stack(xs), torch.stack(rots)

    x_train, r_train = load(train_recs)
    x_val, r_val = load(val_recs)
    x_eval, r_eval = load(eval_recs)

    backbone = build_backbone(cfg.backbone, seed=cfg.seed)
    model = PoseModel(backbone, build_pose_head(backbone.feature_dim))
    trainable = [p for p in model.parameters() if p.requires_grad]
    opt = Lookahead(torch.optim.Adam(trainable, lr=cfg.lr_pose),
                    k=cfg.lookahead_steps)
    n = x_train.shape[0]
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = torch.randperm(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            opt.zero_grad()
            loss = geodesic_loss(model(x_train[idx]), r_train[idx])
            loss.backward()
            opt.step()
            total += loss.item() * idx.shape[0]
        model.eval()
        with torch.no_grad():
            val_loss = float(geodesic_loss(model(x_val), r_val))
        history.append((epoch, total / n, val_loss))
    _write_history(history, log_path)

    model.eval()
    with torch.no_grad():
        pred = model(x_eval)
        errors = geodesic_angle(pred, r_eval)
        matrix_mse = float(torch.mean((pred - r_eval) ** 2))
    if predictions_path:
        write_predictions_csv(predictions_path,
                              [r.id for r in eval_recs], pred.numpy())
    return PoseResult(model=model, history=history,
                      eval_ids=[r.id for r in eval_recs],
                      eval_mean_error=float(errors.mean()),
                      eval_matrix_mse=matrix_mse)


def write_predictions_csv(path: str, ids: list[str], matrices: np.ndarray) -> None:
    """Predictions in the evaluator's wire format: id,m00,...,m22 row-major."""
    if len(ids) != matrices.shape[0]:
        raise ValueError("id/matrix count mismatch")
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id"] + [f"m{i}{j}" for i in range(3) for j in range(3)])
        for sid, m in zip(ids, matrices):
            w.writerow([sid] + [repr(float(v)) for v in np.asarray(m).reshape(-1)])
