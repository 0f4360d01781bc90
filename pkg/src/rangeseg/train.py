"""Dataset assembly, point-space augmentation, and the SGD training loop.

Augmentation happens in point space before projection: a yaw rotation
drawn uniformly from (-pi, pi), per-axis translation jitter from
(-0.5, 0.5) m, and a y-axis mirror flip with probability 0.5. The
learning rate decays multiplicatively after every epoch. All randomness
flows from the run seed, so metric logs are bit-identical across runs.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from . import losses
from .config import RunConfig
from .engine import SGD, Tensor, no_grad, save_arrays
from .metrics import ConfusionMatrix, miou
from .model import SegModel
from .pointcloud import (
    LabelArray,
    PointCloud,
    SyntheticSceneSpec,
    default_class_map,
    generate_synthetic_scene,
    load_class_map,
    load_kitti_labels,
    load_kitti_scan,
)
from .projection import RangeImage, project, unproject_labels

Frame = tuple[PointCloud, LabelArray]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the last finite diagnostics."""


def build_dataset(cfg: RunConfig) -> tuple[list[Frame], list[Frame]]:
    """Materialize (train, validation) frame lists from the data section."""
    if cfg.data.kind == "synthetic":
        frames = []
        for index in range(cfg.data.frames):
            spec = dataclasses.replace(cfg.data.scene, rng_seed=cfg.data.scene.rng_seed + index)
            frames.append(generate_synthetic_scene(spec))
    else:
        scan_dir = Path(cfg.data.scan_dir or "")
        label_dir = Path(cfg.data.label_dir or "")
        if not scan_dir.is_dir() or not label_dir.is_dir():
            raise FileNotFoundError(
                f"kitti data needs scan_dir and label_dir; got {scan_dir} / {label_dir}"
            )
        class_map = (
            load_class_map(cfg.data.class_map) if cfg.data.class_map else default_class_map()
        )
        frames = []
        for scan_path in sorted(scan_dir.glob("*.bin")):
            label_path = label_dir / (scan_path.stem + ".label")
            cloud = load_kitti_scan(scan_path)
            labels = load_kitti_labels(label_path, class_map, scan=cloud)
            frames.append((cloud, labels))
        if not frames:
            raise FileNotFoundError(f"no .bin scans found under {scan_dir}")
    split = max(1, min(len(frames) - 1, int(round(len(frames) * cfg.data.train_fraction))))
    if len(frames) == 1:
        return frames, frames
    return frames[:split], frames[split:]


def augment_points(points: np.ndarray, rng: np.random.Generator, cfg: RunConfig) -> np.ndarray:
    """Yaw rotation, translation jitter, and y-mirror flip in point space."""
    out = points.copy()
    opt = cfg.optim
    if opt.rotate:
        angle = rng.uniform(-np.pi, np.pi)
        c, s = np.cos(angle), np.sin(angle)
        x = out[:, 0] * c - out[:, 1] * s
        y = out[:, 0] * s + out[:, 1] * c
        out[:, 0], out[:, 1] = x, y
    if opt.translate:
        out[:, :3] += rng.uniform(-0.5, 0.5, size=3)
    if opt.flip and rng.random() < 0.5:
        out[:, 1] = -out[:, 1]
    return out


def frame_to_arrays(
    cloud: PointCloud, labels: LabelArray, cfg: RunConfig
) -> tuple[np.ndarray, np.ndarray, RangeImage]:
    """Project one frame: normalized (5, H, W) input and (H, W) target labels.

    Pixels without a return carry the ignore class; the input channels are
    standardized with the configured per-channel mean/std.
    """
    img = project(cloud, cfg.projection)
    target = np.full((img.height, img.width), cfg.ignore_id, dtype=np.int32)
    target[img.valid] = labels.labels[img.pixel_to_point[img.valid]]
    mean = np.asarray(cfg.input_mean).reshape(5, 1, 1)
    std = np.asarray(cfg.input_std).reshape(5, 1, 1)
    data = img.data.astype(np.float64).transpose(2, 0, 1)
    return (data - mean) / std, target, img


def class_weights(cfg: RunConfig, frames: list[Frame]) -> np.ndarray | None:
    """Inverse-sqrt-frequency weights over projected training labels."""
    if cfg.class_weight_mode == "uniform":
        return None
    k = cfg.model.class_count
    counts = np.zeros(k)
    for cloud, labels in frames:
        _, target, _ = frame_to_arrays(cloud, labels, cfg)
        counts += np.bincount(target.reshape(-1), minlength=k)[:k]
    scored = np.arange(k) != cfg.ignore_id
    freq = counts / max(counts[scored].sum(), 1.0)
    weights = 1.0 / np.sqrt(np.maximum(freq, 1e-3))
    weights[~scored] = 1.0
    return weights


def validate_model(model: SegModel, frames: list[Frame], cfg: RunConfig) -> float:
    """Point-level validation mIoU (argmax labels pushed back to points)."""
    model.eval()
    cm = ConfusionMatrix(cfg.model.class_count, ignore_id=cfg.ignore_id)
    with no_grad():
        for cloud, labels in frames:
            data, _, img = frame_to_arrays(cloud, labels, cfg)
            logits = model(Tensor(data[None]))
            pred_image = logits.data[0].argmax(axis=0).astype(np.int32)
            pred = unproject_labels(
                pred_image, img, cloud,
                class_count=cfg.model.class_count, ignore_id=cfg.ignore_id,
            )
            cm.update(labels.labels, pred.labels)
    model.train()
    return miou(cm)[1]


def train_model(
    cfg: RunConfig,
    train_frames: list[Frame],
    val_frames: list[Frame],
    out_dir,
    model: SegModel | None = None,
) -> dict:
    """Run the SGD loop; returns history and writes checkpoint + metrics.

    Saves the checkpoint with the best validation mIoU to
    ``out_dir/checkpoint.bin`` and one JSON line per epoch to
    ``out_dir/metrics.jsonl``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = SegModel(cfg.model, seed=cfg.seed)
    model.dropout_rng = np.random.default_rng(cfg.seed + 1)
    model.train()

    weights = class_weights(cfg, train_frames)
    boundary = losses.BoundaryParams(cfg.boundary_theta)
    optimizer = SGD(model.parameters(), lr=cfg.optim.learning_rate, momentum=cfg.optim.momentum)
    conv_weights = model.conv_weight_tensors()

    history: list[dict] = []
    best = {"val_miou": -1.0, "epoch": -1}
    checkpoint_path = out_dir / "checkpoint.bin"
    metrics_path = out_dir / "metrics.jsonl"

    with open(metrics_path, "w") as log:
        for epoch in range(cfg.optim.epochs):
            order = rng.permutation(len(train_frames))
            sums: dict[str, float] = {}
            batches = 0
            for start in range(0, len(order), cfg.optim.batch_size):
                chunk = order[start : start + cfg.optim.batch_size]
                inputs, targets = [], []
                for frame_idx in chunk:
                    cloud, labels = train_frames[frame_idx]
                    if cfg.optim.augment:
                        cloud = PointCloud(augment_points(cloud.points, rng, cfg))
                    data, target, _ = frame_to_arrays(cloud, labels, cfg)
                    inputs.append(data)
                    targets.append(target)
                batch = Tensor(np.stack(inputs))
                target = np.stack(targets)

                logits = model(batch)
                if not np.isfinite(logits.data).all():
                    raise TrainingDiverged(
                        f"non-finite logits at epoch {epoch}, batch {batches}; "
                        f"lr={optimizer.lr:.3g}"
                    )
                total, breakdown = losses.total_loss(
                    logits,
                    target,
                    cfg.loss,
                    class_weights=weights,
                    boundary=boundary,
                    boundary_soft=cfg.boundary_soft,
                    conv_weights=conv_weights,
                    ignore_id=cfg.ignore_id,
                )
                if not np.isfinite(total.data):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {batches}: {breakdown}"
                    )
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                for key, value in breakdown.items():
                    sums[key] = sums.get(key, 0.0) + value
                batches += 1

            val_miou = validate_model(model, val_frames, cfg)
            record = {
                "epoch": epoch,
                "lr": optimizer.lr,
                "loss": {key: value / batches for key, value in sums.items()},
                "val_miou": val_miou,
            }
            history.append(record)
            log.write(json.dumps(record) + "\n")
            if val_miou > best["val_miou"]:
                best = {"val_miou": val_miou, "epoch": epoch}
                save_arrays(checkpoint_path, model.state_dict())
            optimizer.lr *= 1.0 - cfg.optim.decay_per_epoch

    return {
        "history": history,
        "best": best,
        "checkpoint": str(checkpoint_path),
        "metrics": str(metrics_path),
    }
