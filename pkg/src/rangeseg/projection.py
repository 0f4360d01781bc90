"""Spherical projection between point clouds and range images.

The forward map sends a point (x, y, z) at range r to continuous pixel
coordinates

    u = (1/2) * (1 - arctan2(y, x) / pi) * W
    v = (1 - (arcsin(z / r) + f_up) / f) * H

with f = f_up + f_down the vertical field of view. Projection floors and
clamps the continuous coordinates, resolves pixel collisions nearest-first,
and keeps point<->pixel index maps so per-pixel predictions can be pushed
back onto every point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pointcloud import LabelArray, PointCloud


class ProjectionError(ValueError):
    """Invalid projection input (zero range, missing maps, bad dims)."""


@dataclass(frozen=True)
class ProjectionConfig:
    """Range-image geometry: size in pixels and vertical field of view."""

    width: int = 2048
    height: int = 64
    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(25.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1x1, got {self.height}x{self.width}")
        if self.fov <= 0:
            raise ValueError(f"total field of view must be positive, got {self.fov}")

    @property
    def fov(self) -> float:
        return self.fov_up + self.fov_down

    @classmethod
    def from_degrees(
        cls, width: int, height: int, fov_up_deg: float, fov_down_deg: float
    ) -> "ProjectionConfig":
        return cls(width, height, math.radians(fov_up_deg), math.radians(fov_down_deg))


@dataclass
class RangeImage:
    """H x W x 5 image of (x, y, z, remission, range) plus index maps.

    ``valid`` marks pixels owning a point; invalid pixels carry zeros (the
    mask is authoritative, never a sentinel range). ``point_to_pixel`` holds
    each projected point's integer (u, v), -1 for out-of-view points;
    ``pixel_to_point`` holds the collision-winning point index, -1 if none.
    """

    data: np.ndarray
    valid: np.ndarray
    point_to_pixel: np.ndarray | None
    pixel_to_point: np.ndarray | None
    config: ProjectionConfig | None = None

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 5:
            raise ValueError(f"range image data must be (H, W, 5), got {self.data.shape}")
        if self.valid.shape != self.data.shape[:2]:
            raise ValueError(
                f"valid mask {self.valid.shape} does not match image {self.data.shape[:2]}"
            )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def occupancy(self) -> float:
        return float(self.valid.mean())


def pixel_of_point(x, y, z, cfg: ProjectionConfig):
    """Continuous (u, v) pixel coordinates, before any flooring or clamping.

    Accepts scalars or arrays. The azimuth term uses the quadrant-aware
    two-argument arctangent. Raises on zero range.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r == 0):
        raise ProjectionError("pixel_of_point is undefined at zero range")
    u = 0.5 * (1.0 - np.arctan2(y, x) / np.pi) * cfg.width
    v = (1.0 - (np.arcsin(z / r) + cfg.fov_up) / cfg.fov) * cfg.height
    return u, v


def project(cloud: PointCloud, cfg: ProjectionConfig) -> RangeImage:
    """Project a cloud to a range image.

    Points whose elevation falls outside [-f_down, f_up] are left
    unprojected. Continuous coordinates are floored then clamped; u wraps
    modulo W at the azimuth seam. When several points land on one pixel the
    nearest range wins, ties broken by lower point index; losers still
    record their pixel in ``point_to_pixel``.
    """
    xyz = cloud.xyz
    r = cloud.ranges()
    elev = np.arcsin(xyz[:, 2] / r)
    in_view = (elev >= -cfg.fov_down) & (elev <= cfg.fov_up)

    u, v = pixel_of_point(xyz[:, 0], xyz[:, 1], xyz[:, 2], cfg)
    ui = np.floor(u).astype(np.int64) % cfg.width
    vi = np.clip(np.floor(v).astype(np.int64), 0, cfg.height - 1)

    point_to_pixel = np.full((len(cloud), 2), -1, dtype=np.int32)
    point_to_pixel[in_view, 0] = ui[in_view]
    point_to_pixel[in_view, 1] = vi[in_view]

    pixel_to_point = np.full((cfg.height, cfg.width), -1, dtype=np.int32)
    idx = np.flatnonzero(in_view)
    # descending (range, index) so the final (nearest, lowest-index) write wins
    order = idx[np.lexsort((idx, r[idx]))][::-1]
    pixel_to_point[vi[order], ui[order]] = order

    valid = pixel_to_point >= 0
    data = np.zeros((cfg.height, cfg.width, 5), dtype=np.float32)
    winners = pixel_to_point[valid]
    data[valid, 0] = xyz[winners, 0]
    data[valid, 1] = xyz[winners, 1]
    data[valid, 2] = xyz[winners, 2]
    data[valid, 3] = cloud.remission[winners]
    data[valid, 4] = r[winners]
    return RangeImage(data, valid, point_to_pixel, pixel_to_point, cfg)


def unproject_labels(
    label_image: np.ndarray,
    img: RangeImage,
    cloud: PointCloud,
    *,
    class_count: int,
    ignore_id: int = 0,
) -> LabelArray:
    """Give each point the label of its recorded pixel.

    Collision-losing points read the label at their own (u, v) cell;
    unprojected points receive the ignore class.
    """
    if img.point_to_pixel is None:
        raise ProjectionError("range image carries no point_to_pixel map")
    if label_image.shape != (img.height, img.width):
        raise ProjectionError(
            f"label image {label_image.shape} does not match range image "
            f"({img.height}, {img.width})"
        )
    if len(cloud) != len(img.point_to_pixel):
        raise ProjectionError(
            f"cloud has {len(cloud)} points but the map covers {len(img.point_to_pixel)}"
        )
    labels = np.full(len(cloud), ignore_id, dtype=np.int32)
    uv = img.point_to_pixel
    projected = uv[:, 0] >= 0
    labels[projected] = label_image[uv[projected, 1], uv[projected, 0]]
    return LabelArray(labels, class_count=class_count)


# ----------------------------------------------------------------------
# on-disk format: JSON header line, float32 channel planes, validity bits
# ----------------------------------------------------------------------

def save_range_image(path, img: RangeImage) -> None:
    header = {
        "H": img.height,
        "W": img.width,
        "channels": 5,
        "dtype": "<f4",
    }
    planes = np.ascontiguousarray(img.data.transpose(2, 0, 1), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(planes.tobytes())
        fh.write(np.packbits(img.valid.reshape(-1)).tobytes())


def load_range_image(path) -> RangeImage:
    raw = Path(path).read_bytes()
    header_end = raw.index(b"\n")
    header = json.loads(raw[:header_end].decode("utf-8"))
    h, w, c = header["H"], header["W"], header["channels"]
    offset = header_end + 1
    nbytes = h * w * c * 4
    planes = np.frombuffer(raw[offset : offset + nbytes], dtype="<f4")
    data = planes.reshape(c, h, w).transpose(1, 2, 0).astype(np.float32)
    bits = np.frombuffer(raw[offset + nbytes :], dtype=np.uint8)
    valid = np.unpackbits(bits, count=h * w).reshape(h, w).astype(bool)
    return RangeImage(data, valid, None, None, None)


def save_index_maps(path, img: RangeImage) -> None:
    np.savez(
        path,
        point_to_pixel=img.point_to_pixel,
        pixel_to_point=img.pixel_to_point,
    )


def load_index_maps(path) -> tuple[np.ndarray, np.ndarray]:
    with np.load(path) as archive:
        return archive["point_to_pixel"], archive["pixel_to_point"]
