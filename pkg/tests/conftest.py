"""Shared fixtures: tiny configurations sized for fast CPU tests."""

import numpy as np
import pytest

from rangeseg.config import DataConfig, OptimConfig, RunConfig
from rangeseg.losses import LossWeights
from rangeseg.model import ModelConfig
from rangeseg.pointcloud import SyntheticSceneSpec
from rangeseg.projection import ProjectionConfig


def tiny_model_config(**overrides) -> ModelConfig:
    """Smallest architecture that still exercises every block."""
    kwargs = dict(
        channels=(5, 4, 4, 6, 8, 12, 16, 20, 24, 28, 20, 16, 12, 8),
        class_count=5,
        dropout_p=0.0,
        icm_branches=((3, 1, 2), (5, 2, 2), (7, 4, 2)),
        lhd_depths=(2, 2, 2, 2, 2),
        lhd_growth=(4, 4, 6, 6, 8),
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def tiny_scene_spec(**overrides) -> SyntheticSceneSpec:
    kwargs = dict(
        beam_rows=16,
        beam_cols=64,
        box_count=4,
        pole_count=5,
        wall_count=2,
        noise_sigma=0.02,
        extent=25.0,
    )
    kwargs.update(overrides)
    return SyntheticSceneSpec(**kwargs)


def tiny_run_config(**overrides) -> RunConfig:
    """End-to-end pipeline config on 16x64 frames."""
    kwargs = dict(
        projection=ProjectionConfig.from_degrees(64, 16, 14.2, 14.2),
        model=tiny_model_config(
            channels=(5, 4, 4, 6, 8, 12, 16, 24, 32, 40, 24, 16, 12, 8),
            lhd_growth=(),
        ),
        loss=LossWeights(),
        optim=OptimConfig(
            learning_rate=0.01,
            decay_per_epoch=0.01,
            momentum=0.9,
            batch_size=4,
            epochs=2,
        ),
        data=DataConfig(kind="synthetic", frames=6, scene=tiny_scene_spec()),
        seed=3,
    )
    kwargs.update(overrides)
    return RunConfig(**kwargs)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
