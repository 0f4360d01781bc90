"""Point-label cleanup by a windowed K-nearest-neighbor vote on the range image.

Each point looks at the valid pixels inside a square window centered on
its recorded pixel, ranks them by absolute range difference, discards any
beyond the cutoff, and lets the k nearest vote with Gaussian weights
exp(-d^2 / (2 sigma^2)). Vote ties break toward the smaller class id; a
point whose window offers no usable neighbor keeps its nearest-pixel
label. Distance ties rank in window scan order (row-major offsets), which
keeps the procedure exactly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud import LabelArray, PointCloud
from .projection import ProjectionError, RangeImage, unproject_labels


@dataclass(frozen=True)
class KnnParams:
    """Window size (odd), vote count, Gaussian bandwidth, range cutoff."""

    window: int = 5
    k: int = 5
    sigma: float = 1.0
    cutoff: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {self.window}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.cutoff <= 0:
            raise ValueError(f"cutoff must be positive, got {self.cutoff}")


def refine_labels(
    cloud: PointCloud,
    img: RangeImage,
    label_image: np.ndarray,
    params: KnnParams,
    *,
    class_count: int,
    ignore_id: int = 0,
) -> LabelArray:
    """Relabel every projected point by the windowed Gaussian vote."""
    if img.point_to_pixel is None or img.pixel_to_point is None:
        raise ProjectionError("range image carries no index maps")
    if label_image.shape != (img.height, img.width):
        raise ProjectionError(
            f"label image {label_image.shape} does not match range image "
            f"({img.height}, {img.width})"
        )
    baseline = unproject_labels(
        label_image, img, cloud, class_count=class_count, ignore_id=ignore_id
    )
    out = baseline.labels.copy()

    uv = img.point_to_pixel
    projected = np.flatnonzero(uv[:, 0] >= 0)
    if len(projected) == 0:
        return LabelArray(out, class_count=class_count)
    u = uv[projected, 0].astype(np.int64)
    v = uv[projected, 1].astype(np.int64)
    point_range = cloud.ranges()[projected]

    half = params.window // 2
    range_channel = img.data[:, :, 4].astype(np.float64)
    offsets = [(dy, dx) for dy in range(-half, half + 1) for dx in range(-half, half + 1)]

    n = len(projected)
    win = len(offsets)
    dist = np.full((n, win), np.inf)
    votes = np.full((n, win), -1, dtype=np.int64)
    for slot, (dy, dx) in enumerate(offsets):
        ny = v + dy
        nx = u + dx
        inside = (ny >= 0) & (ny < img.height) & (nx >= 0) & (nx < img.width)
        nyc = np.clip(ny, 0, img.height - 1)
        nxc = np.clip(nx, 0, img.width - 1)
        usable = inside & img.valid[nyc, nxc]
        d = np.abs(point_range - range_channel[nyc, nxc])
        d[d > params.cutoff] = np.inf
        dist[usable, slot] = d[usable]
        votes[usable, slot] = label_image[nyc, nxc][usable]

    # stable sort keeps window scan order on distance ties
    order = np.argsort(dist, axis=1, kind="stable")[:, : params.k]
    picked_d = np.take_along_axis(dist, order, axis=1)
    picked_lab = np.take_along_axis(votes, order, axis=1)
    usable = np.isfinite(picked_d)
    weights = np.where(usable, np.exp(-(picked_d**2) / (2.0 * params.sigma**2)), 0.0)

    tally = np.zeros((n, class_count))
    for c in range(class_count):
        tally[:, c] = (weights * (picked_lab == c)).sum(axis=1)
    voted = tally.max(axis=1) > 0
    # argmax returns the first maximum, i.e. the smallest class id on ties
    out[projected[voted]] = tally[voted].argmax(axis=1)
    return LabelArray(out, class_count=class_count)
