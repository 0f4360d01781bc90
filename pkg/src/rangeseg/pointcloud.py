"""Scan and label I/O plus labeled synthetic scene generation.

Scan files follow the rotating-LiDAR convention: headerless little-endian
float32 quadruples (x, y, z, remission). Label files carry one uint32 per
point with the semantic class in the low 16 bits. Synthetic scenes are
ray-cast on a fixed azimuth/elevation grid against geometric primitives so
their projections are dense like real scans.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ScanFormatError(ValueError):
    """Malformed scan/label file: wrong framing or empty contents."""


# synthetic scene class ids (0 is reserved for unlabeled/ignore)
GROUND_CLASS = 1
WALL_CLASS = 2
BOX_CLASS = 3
POLE_CLASS = 4


@dataclass
class PointCloud:
    """N points of (x, y, z, remission), with ranges strictly positive.

    ``dropped_indices`` records original file rows removed at load time
    (non-finite coordinates or zero range), in increasing order.
    """

    points: np.ndarray
    dropped_indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 4:
            raise ValueError(f"points must be (N, 4), got {self.points.shape}")
        if len(self.points) < 1:
            raise ValueError("a point cloud must contain at least one point")
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud contains non-finite values")
        if (self.ranges() <= 0).any():
            raise ValueError("point cloud contains zero-range points")
        self.dropped_indices = np.asarray(self.dropped_indices, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def remission(self) -> np.ndarray:
        return self.points[:, 3]

    def ranges(self) -> np.ndarray:
        return np.sqrt((self.points[:, :3] ** 2).sum(axis=1))


@dataclass
class LabelArray:
    """Per-point class identifiers paired with a cloud of the same length."""

    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 1:
            raise ValueError(f"labels must be 1-D, got shape {self.labels.shape}")
        if self.class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {self.class_count}")
        bad = (self.labels < 0) | (self.labels >= self.class_count)
        if bad.any():
            raise ValueError(
                f"labels out of range [0, {self.class_count}): "
                f"{np.unique(self.labels[bad])}"
            )

    def __len__(self) -> int:
        return len(self.labels)


# ----------------------------------------------------------------------
# KITTI-format files
# ----------------------------------------------------------------------

def load_kitti_scan(path) -> PointCloud:
    """Decode a headerless float32 scan file, dropping degenerate points.

    Points with zero range or non-finite values are removed; their original
    indices are kept on ``dropped_indices`` so label files stay pairable.
    """
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        raise ScanFormatError(f"{path}: empty scan")
    if len(raw) % 16 != 0:
        raise ScanFormatError(
            f"{path}: scan length {len(raw)} bytes is not a multiple of 16"
        )
    records = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(records).all(axis=1)
    radius = np.sqrt((records[:, :3] ** 2).sum(axis=1))
    keep = finite & (radius > 0)
    if not keep.any():
        raise ScanFormatError(f"{path}: no valid points after filtering")
    dropped = np.flatnonzero(~keep)
    return PointCloud(records[keep], dropped_indices=dropped)


def save_kitti_scan(path, cloud: PointCloud) -> None:
    with open(path, "wb") as fh:
        fh.write(cloud.points.astype("<f4").tobytes())


def save_kitti_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(np.asarray(labels).astype("<u4").tobytes())


@dataclass(frozen=True)
class ClassMap:
    """Raw-label to contiguous train-label mapping; unknown raws -> ignore."""

    raw_to_train: dict[int, int]
    names: dict[int, str]
    ignore_id: int = 0

    @property
    def class_count(self) -> int:
        return max(max(self.raw_to_train.values()), self.ignore_id) + 1

    def lookup_table(self) -> np.ndarray:
        table = np.full(1 << 16, self.ignore_id, dtype=np.int32)
        for raw, train in self.raw_to_train.items():
            table[raw] = train
        return table


def parse_class_map(text: str, ignore_id: int = 0) -> ClassMap:
    """Parse 'raw_id train_id name' lines; '#' starts a comment."""
    raw_to_train: dict[int, int] = {}
    names: dict[int, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 2)
        if len(parts) < 2:
            raise ValueError(f"class map line {lineno}: expected 'raw train [name]'")
        raw, train = int(parts[0]), int(parts[1])
        if not (0 <= raw < (1 << 16)):
            raise ValueError(f"class map line {lineno}: raw id {raw} out of range")
        raw_to_train[raw] = train
        names[raw] = parts[2] if len(parts) == 3 else str(raw)
    if not raw_to_train:
        raise ValueError("class map is empty")
    return ClassMap(raw_to_train, names, ignore_id=ignore_id)


def load_class_map(path, ignore_id: int = 0) -> ClassMap:
    return parse_class_map(Path(path).read_text(), ignore_id=ignore_id)


def default_class_map() -> ClassMap:
    """The standard 19-class + ignore mapping shipped with the package."""
    return load_class_map(Path(__file__).parent / "data" / "semantic_kitti_classmap.txt")


def load_kitti_labels(path, class_map: ClassMap, scan: PointCloud | None = None) -> LabelArray:
    """Decode uint32 labels (semantic class in low 16 bits) and remap them.

    When ``scan`` is given, the file must contain one label per original
    scan record and labels of dropped points are removed to stay paired.
    """
    raw = Path(path).read_bytes()
    if len(raw) % 4 != 0:
        raise ScanFormatError(
            f"{path}: label length {len(raw)} bytes is not a multiple of 4"
        )
    values = np.frombuffer(raw, dtype="<u4")
    semantic = (values & 0xFFFF).astype(np.int64)
    if scan is not None:
        expected = len(scan) + len(scan.dropped_indices)
        if len(semantic) != expected:
            raise ScanFormatError(
                f"{path}: {len(semantic)} labels paired with {expected}-point scan"
            )
        if len(scan.dropped_indices):
            semantic = np.delete(semantic, scan.dropped_indices)
    mapped = class_map.lookup_table()[semantic]
    return LabelArray(mapped, class_count=class_map.class_count)


# ----------------------------------------------------------------------
# synthetic scenes
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Recipe for one ray-cast scene: primitive counts, beam grid, noise.

    ``miss_rate`` drops returns at random (holes in the range image) and
    ``outlier_rate`` corrupts ranges wildly, mimicking sensor dropout and
    jitter; both default to zero.
    """

    class_count: int = 5
    extent: float = 30.0
    ground: bool = True
    box_count: int = 6
    pole_count: int = 8
    wall_count: int = 2
    noise_sigma: float = 0.01
    miss_rate: float = 0.0
    outlier_rate: float = 0.0
    rng_seed: int = 0
    beam_rows: int = 64
    beam_cols: int = 512
    elev_up_deg: float = 14.0
    elev_down_deg: float = 14.0
    sensor_height: float = 1.6
    max_range: float | None = None

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.miss_rate < 1.0:
            raise ValueError(f"miss_rate must be in [0, 1), got {self.miss_rate}")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError(f"outlier_rate must be in [0, 1), got {self.outlier_rate}")
        if self.extent <= 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        if min(self.beam_rows, self.beam_cols) < 1:
            raise ValueError("beam grid must be at least 1x1")
        used = [GROUND_CLASS] if self.ground else []
        if self.wall_count:
            used.append(WALL_CLASS)
        if self.box_count:
            used.append(BOX_CLASS)
        if self.pole_count:
            used.append(POLE_CLASS)
        if used and max(used) >= self.class_count:
            raise ValueError(
                f"class_count {self.class_count} too small for enabled primitives "
                f"(needs > {max(used)})"
            )

    @property
    def range_limit(self) -> float:
        return self.max_range if self.max_range is not None else 1.5 * self.extent


@dataclass(frozen=True)
class ScenePrimitives:
    """Placed geometry: axis-aligned boxes/walls and vertical cylinders."""

    ground: bool
    boxes: np.ndarray  # (B, 6) min xyz, max xyz
    walls: np.ndarray  # (W, 6)
    poles: np.ndarray  # (P, 4) cx, cy, radius, height


def scene_primitives(spec: SyntheticSceneSpec) -> ScenePrimitives:
    """Deterministic primitive placement for a spec (placement RNG stream)."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.rng_seed).spawn(2)[0])
    e = spec.extent

    def place_box(length, width, height, min_dist):
        while True:
            cx, cy = rng.uniform(-0.8 * e, 0.8 * e, size=2)
            if np.hypot(cx, cy) >= min_dist:
                break
        h = rng.uniform(*height)
        lx = rng.uniform(*length)
        ly = rng.uniform(*width)
        return [cx - lx / 2, cy - ly / 2, 0.0, cx + lx / 2, cy + ly / 2, h]

    boxes = np.array(
        [place_box((1.0, 4.0), (1.0, 2.5), (1.0, 2.5), 4.0) for _ in range(spec.box_count)]
    ).reshape(spec.box_count, 6)
    walls = np.array(
        [
            place_box((8.0, 18.0), (0.2, 0.5), (2.0, 4.0), 6.0)
            if rng.random() < 0.5
            else place_box((0.2, 0.5), (8.0, 18.0), (2.0, 4.0), 6.0)
            for _ in range(spec.wall_count)
        ]
    ).reshape(spec.wall_count, 6)
    poles = []
    for _ in range(spec.pole_count):
        while True:
            cx, cy = rng.uniform(-0.85 * e, 0.85 * e, size=2)
            if np.hypot(cx, cy) >= 3.0:
                break
        poles.append([cx, cy, rng.uniform(0.08, 0.3), rng.uniform(2.0, 6.0)])
    return ScenePrimitives(
        ground=spec.ground,
        boxes=boxes,
        walls=walls,
        poles=np.array(poles).reshape(spec.pole_count, 4),
    )


def beam_directions(spec: SyntheticSceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Unit ray directions (rows*cols, 3) and the sensor origin.

    Row 0 is the highest elevation; azimuth sweeps from +pi (exclusive of
    the wrap duplicate) downwards so columns cover the full circle.
    """
    az = np.pi - (np.arange(spec.beam_cols) + 0.5) * (2 * np.pi / spec.beam_cols)
    up = np.deg2rad(spec.elev_up_deg)
    down = np.deg2rad(spec.elev_down_deg)
    if spec.beam_rows == 1:
        elev = np.array([(up - down) / 2.0])
    else:
        elev = np.linspace(up, -down, spec.beam_rows)
    elev_grid, az_grid = np.meshgrid(elev, az, indexing="ij")
    ce = np.cos(elev_grid)
    dirs = np.stack(
        [ce * np.cos(az_grid), ce * np.sin(az_grid), np.sin(elev_grid)], axis=-1
    ).reshape(-1, 3)
    origin = np.array([0.0, 0.0, spec.sensor_height])
    return dirs, origin


_T_MIN = 0.5


def cast_rays(
    spec: SyntheticSceneSpec, prims: ScenePrimitives
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest hit per beam: distance, class, and primitive instance id.

    Misses get t = inf, class 0, instance -1. Instances are numbered
    ground, boxes, walls, poles in placement order.
    """
    dirs, origin = beam_directions(spec)
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_c = np.zeros(n, dtype=np.int32)
    best_i = np.full(n, -1, dtype=np.int32)

    def consider(t, mask, cls, instance):
        better = mask & (t > _T_MIN) & (t < best_t)
        best_t[better] = t[better]
        best_c[better] = cls
        best_i[better] = instance

    instance = 0
    if prims.ground:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(dz < 0, -origin[2] / dz, np.inf)
        px = origin[0] + t * dirs[:, 0]
        py = origin[1] + t * dirs[:, 1]
        inside = (np.abs(px) <= spec.extent) & (np.abs(py) <= spec.extent)
        consider(t, np.isfinite(t) & inside, GROUND_CLASS, instance)
        instance += 1

    for group, cls in ((prims.boxes, BOX_CLASS), (prims.walls, WALL_CLASS)):
        for box in group:
            lo, hi = box[:3], box[3:]
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo - origin) / dirs
                t2 = (hi - origin) / dirs
            tnear = np.nanmax(np.minimum(t1, t2), axis=1)
            tfar = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (tnear <= tfar) & (tfar > _T_MIN) & (tnear > _T_MIN)
            consider(tnear, hit, cls, instance)
            instance += 1

    for cx, cy, radius, height in prims.poles:
        ox, oy = origin[0] - cx, origin[1] - cy
        a = dirs[:, 0] ** 2 + dirs[:, 1] ** 2
        b = 2 * (ox * dirs[:, 0] + oy * dirs[:, 1])
        c = ox * ox + oy * oy - radius * radius
        disc = b * b - 4 * a * c
        ok = (disc >= 0) & (a > 0)
        t = np.full(n, np.inf)
        t[ok] = (-b[ok] - np.sqrt(disc[ok])) / (2 * a[ok])
        pz = origin[2] + t * dirs[:, 2]
        consider(t, ok & (pz >= 0) & (pz <= height), POLE_CLASS, instance)
        instance += 1

    too_far = best_t > spec.range_limit
    best_t[too_far] = np.inf
    best_c[too_far] = 0
    best_i[too_far] = -1
    return best_t, best_c, best_i


#: per-class remission base ranges; walls and boxes share one range so
#: intensity alone cannot separate them and spatial context stays necessary
_REMISSION_RANGE = {
    GROUND_CLASS: (0.05, 0.35),
    WALL_CLASS: (0.2, 0.7),
    BOX_CLASS: (0.2, 0.7),
    POLE_CLASS: (0.45, 0.95),
}


def generate_synthetic_scene(spec: SyntheticSceneSpec) -> tuple[PointCloud, LabelArray]:
    """Ray-cast a labeled scene; deterministic for a fixed ``rng_seed``.

    Every returned point is labeled by the primitive its beam hit; beams
    that miss everything produce no point (sky), which leaves realistic
    gaps in the projected range image. Remission is drawn per primitive
    instance from overlapping class-conditional ranges plus point noise.
    """
    prims = scene_primitives(spec)
    t, cls, inst = cast_rays(spec, prims)
    hit = np.isfinite(t)
    if not hit.any():
        raise ValueError("synthetic scene produced no hits; enlarge primitives")
    noise_rng = np.random.default_rng(np.random.SeedSequence(spec.rng_seed).spawn(2)[1])

    instance_classes = (
        ([GROUND_CLASS] if prims.ground else [])
        + [BOX_CLASS] * len(prims.boxes)
        + [WALL_CLASS] * len(prims.walls)
        + [POLE_CLASS] * len(prims.poles)
    )
    instance_rem = np.array(
        [noise_rng.uniform(*_REMISSION_RANGE[c]) for c in instance_classes]
    )

    dirs, _ = beam_directions(spec)
    if spec.miss_rate > 0:
        survive = noise_rng.random(int(hit.sum())) >= spec.miss_rate
        kept = np.flatnonzero(hit)[survive]
        if len(kept) == 0:
            raise ValueError("miss_rate removed every return")
        hit = np.zeros_like(hit)
        hit[kept] = True
    t_hit = t[hit]
    if spec.noise_sigma > 0:
        t_hit = np.maximum(t_hit + noise_rng.normal(0, spec.noise_sigma, t_hit.shape), 0.05)
    if spec.outlier_rate > 0:
        wild = noise_rng.random(t_hit.shape) < spec.outlier_rate
        t_hit = np.where(
            wild, noise_rng.uniform(1.0, spec.range_limit, t_hit.shape), t_hit
        )
    # sensor frame: the scan origin is the sensor, so a point's elevation
    # equals its beam's elevation and projections stay grid-aligned
    pts = t_hit[:, None] * dirs[hit]
    labels = cls[hit]
    rem = instance_rem[inst[hit]]
    rem = np.clip(rem + noise_rng.normal(0, 0.05, rem.shape), 0.01, 1.0)
    cloud = PointCloud(np.column_stack([pts, rem]))
    return cloud, LabelArray(labels, class_count=spec.class_count)
