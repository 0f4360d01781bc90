"""Training criterion: weighted cross-entropy, Jaccard surrogate, boundary
term, and weight decay, combined with per-term weights.

The boundary machinery derives a band map from any binary (or soft) mask as

    band = pool(1 - y, theta) - (1 - y)

with max-pooling over a theta-window, edge-replicated at borders. The
boundary loss is the mean F1 complement between predicted and true bands
over classes whose true band is non-empty. A soft variant pools class
probabilities instead of hard masks so the term stays differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, astensor, max_pool2d, softmax
from .engine.ops import log_softmax

#: scale applied to the summed squared convolution weights before the
#: user-facing regularization weight
REG_BASE_COEFF = 1e-4


class LossError(ValueError):
    """Raised for degenerate loss inputs (e.g. every pixel ignored)."""


@dataclass(frozen=True)
class LossWeights:
    """Per-term weights (cross-entropy, Jaccard, boundary, regularizer)."""

    alpha: float = 1.0
    beta: float = 1.5
    gamma: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class BoundaryParams:
    """Pooling window for boundary-band extraction."""

    theta: int = 3

    def __post_init__(self):
        if self.theta < 3 or self.theta % 2 == 0:
            raise ValueError(f"theta must be odd and >= 3, got {self.theta}")


def _flatten_logits(logits: Tensor) -> Tensor:
    """(K, H, W) or (N, K, H, W) -> canonical (N, K, H, W)."""
    if logits.ndim == 3:
        return logits.reshape((1,) + logits.shape)
    if logits.ndim == 4:
        return logits
    raise LossError(f"logits must be 3-D or 4-D, got shape {logits.shape}")


def _flatten_labels(labels: np.ndarray, spatial: tuple[int, ...]) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    if labels.shape != spatial:
        raise LossError(f"labels {labels.shape} do not match logits spatial {spatial}")
    return labels


def weighted_cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    class_weights: np.ndarray | None = None,
    ignore_id: int | None = 0,
) -> Tensor:
    """Mean over non-ignored pixels of -w_c * log softmax_c.

    ``class_weights`` defaults to ones; weights must be positive for every
    scored class.
    """
    logits = _flatten_logits(astensor(logits))
    n, k, h, w = logits.shape
    labels = _flatten_labels(labels, (n, h, w))
    if class_weights is None:
        class_weights = np.ones(k)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if class_weights.shape != (k,):
        raise LossError(f"class weights must have shape ({k},), got {class_weights.shape}")

    valid = np.ones_like(labels, dtype=bool)
    if ignore_id is not None:
        valid &= labels != ignore_id
    count = int(valid.sum())
    if count == 0:
        raise LossError("weighted_cross_entropy: every pixel is ignored")
    scored_classes = np.unique(labels[valid])
    if (class_weights[scored_classes] <= 0).any():
        raise LossError("class weights must be positive for scored classes")

    logp = log_softmax(logits, axis=1)
    onehot = np.zeros((n, k, h, w))
    np.put_along_axis(onehot, np.clip(labels, 0, k - 1)[:, None], 1.0, axis=1)
    pixel_weight = class_weights[np.clip(labels, 0, k - 1)] * valid
    picked = (logp * Tensor(onehot)).sum(axis=1)
    return -(picked * Tensor(pixel_weight)).sum() * (1.0 / count)


def _lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard set function along sorted error prefixes."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if len(gt_sorted) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(
    probs: Tensor, labels: np.ndarray, ignore_id: int | None = 0
) -> Tensor:
    """Jaccard surrogate on softmax probabilities, averaged over present classes.

    Per class the errors are 1 - p on ground-truth pixels and p elsewhere,
    sorted descending and weighted by the Jaccard extension gradient.
    Returns exactly 0 when no class is present.
    """
    probs = _flatten_logits(astensor(probs))
    n, k, h, w = probs.shape
    labels = _flatten_labels(labels, (n, h, w))
    sums = probs.data.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise LossError("lovasz_softmax expects probabilities summing to 1 per pixel")

    flat_labels = labels.reshape(-1)
    valid = np.ones_like(flat_labels, dtype=bool)
    if ignore_id is not None:
        valid &= flat_labels != ignore_id
    if not valid.any():
        return Tensor(0.0)
    idx = np.flatnonzero(valid)
    flat_probs = probs.transpose(1, 0, 2, 3).reshape((k, n * h * w))
    present = np.unique(flat_labels[idx])

    terms = []
    for c in present:
        fg = (flat_labels[idx] == c).astype(np.float64)
        p_c = flat_probs[int(c)][idx]
        errors = Tensor(fg) + p_c - 2.0 * (Tensor(fg) * p_c)
        order = np.argsort(-errors.data, kind="stable")
        grad = _lovasz_grad(fg[order])
        terms.append((errors[order] * Tensor(grad)).sum())
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def boundary_map(y, theta: int = 3):
    """Binary boundary band: pool(1 - y, theta) - (1 - y), edge-padded.

    Accepts a numpy array (returns numpy) or a Tensor (returns a Tensor and
    stays differentiable, which also admits soft masks in [0, 1]).
    """
    BoundaryParams(theta)
    if isinstance(y, Tensor):
        if y.ndim != 2:
            raise LossError(f"boundary_map expects an (H, W) mask, got {y.shape}")
        inv = 1.0 - y
        shaped = inv.reshape((1, 1) + inv.shape)
        pooled = max_pool2d(shaped, theta, stride=1, padding="same", pad_mode="edge")
        return (pooled - shaped).reshape(inv.shape)
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise LossError("hard boundary_map expects a binary mask")
    inv = 1.0 - y
    padded = np.pad(inv, theta // 2, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (theta, theta))
    return windows.max(axis=(-2, -1)) - inv


def _f1_complement(pred_band, true_band: np.ndarray):
    """1 - 2PR/(P+R); any 0/0 along the way resolves to 0 (loss 1)."""
    true_total = float(true_band.sum())
    if isinstance(pred_band, Tensor):
        overlap = (pred_band * Tensor(true_band)).sum()
        pred_total = pred_band.sum()
        if float(pred_total.data) == 0.0 or true_total == 0.0 or float(overlap.data) == 0.0:
            return Tensor(1.0)
        precision = overlap / pred_total
        recall = overlap * (1.0 / true_total)
        return 1.0 - 2.0 * precision * recall / (precision + recall)
    overlap = float((pred_band * true_band).sum())
    pred_total = float(pred_band.sum())
    if pred_total == 0.0 or true_total == 0.0 or overlap == 0.0:
        return 1.0
    precision = overlap / pred_total
    recall = overlap / true_total
    return 1.0 - 2.0 * precision * recall / (precision + recall)


def boundary_loss(
    probs,
    labels: np.ndarray,
    theta: int = 3,
    soft: bool = True,
    ignore_id: int | None = 0,
):
    """Mean F1 complement of boundary bands over classes with a true band.

    The soft variant (default) pools class probabilities so gradients flow;
    the hard variant thresholds class masks at 0.5 and returns a float.
    Classes whose ground-truth band is empty are skipped; if none are
    scored the loss is 0.
    """
    is_tensor = isinstance(probs, Tensor)
    arr = probs.data if is_tensor else np.asarray(probs, dtype=np.float64)
    if arr.ndim == 3:
        batched = astensor(probs).reshape((1,) + arr.shape) if is_tensor else arr[None]
    elif arr.ndim == 4:
        batched = astensor(probs) if is_tensor else arr
    else:
        raise LossError(f"probabilities must be 3-D or 4-D, got {arr.shape}")
    shape = batched.shape if is_tensor else batched.shape
    n, k, h, w = shape
    labels = _flatten_labels(labels, (n, h, w))

    terms = []
    for c in range(k):
        if ignore_id is not None and c == ignore_id:
            continue
        gt_mask = (labels == c).astype(np.float64)
        true_band = np.stack([boundary_map(gt_mask[b], theta) for b in range(n)])
        if true_band.sum() == 0.0:
            continue
        if soft and is_tensor:
            p_c = batched[:, c]
            shaped = p_c.reshape((n, 1, h, w))
            pooled = max_pool2d(1.0 - shaped, theta, stride=1, padding="same", pad_mode="edge")
            pred_band = (pooled - (1.0 - shaped)).reshape((n, h, w))
        else:
            data = batched.data if is_tensor else batched
            hard = (data[:, c] > 0.5).astype(np.float64)
            pred_band = np.stack([boundary_map(hard[b], theta) for b in range(n)])
        terms.append(_f1_complement(pred_band, true_band))

    if not terms:
        return Tensor(0.0) if (soft and is_tensor) else 0.0
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def regularization(conv_weights: list[Tensor]) -> Tensor:
    """Summed squared convolution weights scaled by the base coefficient."""
    if not conv_weights:
        return Tensor(0.0)
    total = (conv_weights[0] * conv_weights[0]).sum()
    for wt in conv_weights[1:]:
        total = total + (wt * wt).sum()
    return total * REG_BASE_COEFF


def total_loss(
    logits: Tensor,
    labels: np.ndarray,
    weights: LossWeights,
    *,
    class_weights: np.ndarray | None = None,
    boundary: BoundaryParams = BoundaryParams(),
    boundary_soft: bool = True,
    conv_weights: list[Tensor] | None = None,
    ignore_id: int | None = 0,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the four terms plus a per-term breakdown for logging."""
    logits = astensor(logits)
    probs = softmax(logits, axis=-3)
    wce = weighted_cross_entropy(logits, labels, class_weights, ignore_id)
    jaccard = lovasz_softmax(probs, labels, ignore_id)
    if weights.gamma > 0:
        band = boundary_loss(probs, labels, boundary.theta, soft=boundary_soft, ignore_id=ignore_id)
        if not isinstance(band, Tensor):
            band = Tensor(float(band))
    else:
        band = Tensor(0.0)
    reg = regularization(conv_weights or [])
    total = weights.alpha * wce + weights.beta * jaccard + weights.gamma * band + weights.lam * reg
    breakdown = {
        "cross_entropy": float(wce.data),
        "jaccard": float(jaccard.data),
        "boundary": float(band.data),
        "regularization": float(reg.data),
        "total": float(total.data),
    }
    return total, breakdown
