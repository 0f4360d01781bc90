"""Full evaluation pipeline: project, infer, unproject, refine, score.

A report carries point-level results both straight off the range image
(nearest-pixel labels) and after the windowed KNN vote, so the effect of
post-processing is always visible side by side.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .engine import Tensor, load_arrays, no_grad
from .metrics import ConfusionMatrix, miou
from .model import SegModel
from .refine import refine_labels
from .projection import unproject_labels
from .train import Frame, frame_to_arrays


def load_checkpoint_model(cfg: RunConfig, checkpoint_path) -> SegModel:
    """Instantiate the configured model and load checkpoint weights.

    The class count baked into the checkpoint head must match the config.
    """
    state = load_arrays(checkpoint_path)
    head_key = "head.weight"
    if head_key in state and state[head_key].shape[0] != cfg.model.class_count:
        raise ValueError(
            f"checkpoint predicts {state[head_key].shape[0]} classes but the "
            f"configuration expects {cfg.model.class_count}"
        )
    model = SegModel(cfg.model, seed=cfg.seed)
    model.load_state_dict(state)
    model.eval()
    return model


def evaluate_frames(model: SegModel, frames: list[Frame], cfg: RunConfig) -> dict:
    """Score frames with and without KNN refinement; returns a JSON-ready report."""
    if not frames:
        raise ValueError("evaluation set is empty")
    model.eval()
    k = cfg.model.class_count
    cm_raw = ConfusionMatrix(k, ignore_id=cfg.ignore_id)
    cm_knn = ConfusionMatrix(k, ignore_id=cfg.ignore_id)
    with no_grad():
        for cloud, labels in frames:
            data, _, img = frame_to_arrays(cloud, labels, cfg)
            logits = model(Tensor(data[None]))
            pred_image = logits.data[0].argmax(axis=0).astype(np.int32)
            raw = unproject_labels(
                pred_image, img, cloud, class_count=k, ignore_id=cfg.ignore_id
            )
            refined = refine_labels(
                cloud, img, pred_image, cfg.knn,
                class_count=k, ignore_id=cfg.ignore_id,
            )
            cm_raw.update(labels.labels, raw.labels)
            cm_knn.update(labels.labels, refined.labels)
    ious_raw, miou_raw = miou(cm_raw)
    ious_knn, miou_knn = miou(cm_knn)

    def listed(values: np.ndarray) -> list:
        return [None if np.isnan(v) else float(v) for v in values]

    return {
        "frames": len(frames),
        "class_count": k,
        "ignore_id": cfg.ignore_id,
        "miou_raw": miou_raw,
        "miou_knn": miou_knn,
        "per_class_iou_raw": listed(ious_raw),
        "per_class_iou_knn": listed(ious_knn),
        "knn": {
            "window": cfg.knn.window,
            "k": cfg.knn.k,
            "sigma": cfg.knn.sigma,
            "cutoff": cfg.knn.cutoff,
        },
    }
