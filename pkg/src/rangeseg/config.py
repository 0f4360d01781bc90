"""Run configuration: nested settings, JSON round-trip, key-path overrides.

Two built-in profiles: ``paper`` carries the published training setup
(2048x64 images, full channel ladder, 100 epochs); ``desk`` is the
CPU-friendly default (512x64 images, channels cut ~8x, few classes, short
schedule) used for synthetic-scene experiments.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights
from .model import ModelConfig
from .pointcloud import SyntheticSceneSpec
from .projection import ProjectionConfig
from .refine import KnnParams


class ConfigError(ValueError):
    """Bad configuration file or override."""


@dataclass(frozen=True)
class OptimConfig:
    """Optimizer schedule and augmentation toggles."""

    learning_rate: float = 0.01
    decay_per_epoch: float = 0.01
    momentum: float = 0.0
    batch_size: int = 6
    epochs: int = 100
    augment: bool = True
    rotate: bool = True
    translate: bool = True
    flip: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.decay_per_epoch < 1.0:
            raise ConfigError(f"decay_per_epoch must be in [0, 1), got {self.decay_per_epoch}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


@dataclass(frozen=True)
class DataConfig:
    """Dataset source: generated scenes or scan/label directories."""

    kind: str = "synthetic"
    frames: int = 20
    train_fraction: float = 0.8
    scene: SyntheticSceneSpec = field(default_factory=SyntheticSceneSpec)
    scan_dir: str | None = None
    label_dir: str | None = None
    class_map: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "kitti"):
            raise ConfigError(f"data kind must be 'synthetic' or 'kitti', got {self.kind!r}")
        if self.kind == "synthetic" and self.frames < 1:
            raise ConfigError("synthetic datasets need at least one frame")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs: data, geometry, model, losses, schedule."""

    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    knn: KnnParams = field(default_factory=KnnParams)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    boundary_theta: int = 3
    boundary_soft: bool = True
    class_weight_mode: str = "inv_sqrt_freq"
    input_mean: tuple[float, ...] = (0.0, 0.0, -0.5, 0.4, 10.0)
    input_std: tuple[float, ...] = (12.0, 12.0, 1.0, 0.3, 10.0)
    ignore_id: int = 0
    seed: int = 0

    def __post_init__(self):
        if len(self.input_mean) != 5 or len(self.input_std) != 5:
            raise ConfigError("input_mean and input_std must have 5 entries")
        if any(s <= 0 for s in self.input_std):
            raise ConfigError("input_std entries must be positive")
        if self.class_weight_mode not in ("inv_sqrt_freq", "uniform"):
            raise ConfigError(f"unknown class_weight_mode {self.class_weight_mode!r}")

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "projection": {
                "width": self.projection.width,
                "height": self.projection.height,
                "fov_up_deg": math.degrees(self.projection.fov_up),
                "fov_down_deg": math.degrees(self.projection.fov_down),
            },
            "model": self.model.to_dict(),
            "loss": dataclasses.asdict(self.loss),
            "knn": dataclasses.asdict(self.knn),
            "optim": dataclasses.asdict(self.optim),
            "data": {
                **{k: v for k, v in dataclasses.asdict(self.data).items() if k != "scene"},
                "scene": dataclasses.asdict(self.data.scene),
            },
            "boundary_theta": self.boundary_theta,
            "boundary_soft": self.boundary_soft,
            "class_weight_mode": self.class_weight_mode,
            "input_mean": list(self.input_mean),
            "input_std": list(self.input_std),
            "ignore_id": self.ignore_id,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            proj = data.get("projection", {})
            projection = ProjectionConfig.from_degrees(
                proj.get("width", 2048),
                proj.get("height", 64),
                proj.get("fov_up_deg", 3.0),
                proj.get("fov_down_deg", 25.0),
            )
            data_section = dict(data.get("data", {}))
            scene = SyntheticSceneSpec(**data_section.pop("scene", {}))
            return cls(
                projection=projection,
                model=ModelConfig.from_dict(data.get("model", {})),
                loss=LossWeights(**data.get("loss", {})),
                knn=KnnParams(**data.get("knn", {})),
                optim=OptimConfig(**data.get("optim", {})),
                data=DataConfig(scene=scene, **data_section),
                boundary_theta=data.get("boundary_theta", 3),
                boundary_soft=data.get("boundary_soft", True),
                class_weight_mode=data.get("class_weight_mode", "inv_sqrt_freq"),
                input_mean=tuple(data.get("input_mean", (0.0, 0.0, -0.5, 0.4, 10.0))),
                input_std=tuple(data.get("input_std", (12.0, 12.0, 1.0, 0.3, 10.0))),
                ignore_id=data.get("ignore_id", 0),
                seed=data.get("seed", 0),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(payload)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    # ------------------------------------------------------------------
    # overrides
    # ------------------------------------------------------------------
    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        """Apply 'dotted.key=value' assignments on top of this config."""
        payload = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, raw_value = item.split("=", 1)
            _assign(payload, key.strip().lstrip("-"), raw_value.strip())
        return RunConfig.from_dict(payload)


def _coerce(raw: str, template):
    if isinstance(template, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(template, int) and not isinstance(template, bool):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, (list, tuple)):
        parsed = json.loads(raw)
        if not isinstance(parsed, list):
            raise ConfigError(f"expected a JSON list for {raw!r}")
        return parsed
    if template is None:
        return raw
    return raw


def _assign(payload: dict, dotted: str, raw_value: str) -> None:
    keys = dotted.split(".")
    node = payload
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown configuration key {dotted!r}")
        node = node[key]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown configuration key {dotted!r}")
    node[leaf] = _coerce(raw_value, node[leaf])


# ----------------------------------------------------------------------
# profiles
# ----------------------------------------------------------------------

def paper_profile() -> RunConfig:
    """Published setup: 2048x64 images, full ladder, 100-epoch schedule."""
    return RunConfig(
        projection=ProjectionConfig.from_degrees(2048, 64, 3.0, 25.0),
        model=ModelConfig(),
        optim=OptimConfig(),
    )


#: desk channel ladder, roughly the published one cut 8x (even widths)
DESK_CHANNELS = (5, 4, 4, 6, 12, 24, 40, 90, 160, 218, 106, 56, 24, 8)


def desk_profile() -> RunConfig:
    """CPU-scale default: 512x64 images, ~8x thinner ladder, 5 classes.

    The projection FOV is symmetric and slightly wider than the beam grid
    so grid rows stay strictly inside the image."""
    scene = SyntheticSceneSpec(beam_rows=64, beam_cols=512)
    return RunConfig(
        projection=ProjectionConfig.from_degrees(512, 64, 14.2, 14.2),
        model=ModelConfig(
            channels=DESK_CHANNELS,
            class_count=5,
            dropout_p=0.1,
            icm_branches=((3, 1, 2), (5, 2, 2), (7, 4, 2)),
            lhd_depths=(3, 3, 3, 3, 3),
        ),
        optim=OptimConfig(
            learning_rate=0.01,
            decay_per_epoch=0.01,
            momentum=0.9,
            batch_size=4,
            epochs=20,
        ),
        data=DataConfig(kind="synthetic", frames=20, scene=scene),
    )


PROFILES = {"paper": paper_profile, "desk": desk_profile}


def _deep_merge(base: dict, overlay: dict) -> dict:
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(profile: str = "desk", config_path=None, overrides: list[str] | None = None) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]()
    if config_path is not None:
        try:
            overlay = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: not valid JSON ({exc})") from exc
        cfg = RunConfig.from_dict(_deep_merge(cfg.to_dict(), overlay))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
