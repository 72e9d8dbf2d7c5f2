"""Shared fixtures for the diffaug test suite."""

import numpy as np
import pytest

from diffaug.config import AdamWConfig, ClassifierConfig, CondNetConfig, TrainConfig
from diffaug.denoisers import AnalyticGaussianModel, CondNetLite
from diffaug.diffusion import LabeledSample
from diffaug.schedule import NoiseSchedule, linear_schedule


@pytest.fixture(scope="session")
def schedule() -> NoiseSchedule:
    """Default 1000-step linear schedule"""
    return linear_schedule(1000)


@pytest.fixture(scope="session")
def short_schedule() -> NoiseSchedule:
    """50-step schedule for exhaustive loops"""
    return linear_schedule(50, 1e-3, 0.2)


@pytest.fixture
def gaussian_model(schedule: NoiseSchedule) -> AnalyticGaussianModel:
    """Exact denoiser for N(3, 0.5^2) scalar data"""
    return AnalyticGaussianModel(mu=3.0, sigma0=0.5, schedule=schedule)


@pytest.fixture
def tiny_condnet_config() -> CondNetConfig:
    """8x8 two-level network small enough for finite differences"""
    return CondNetConfig(
        num_classes=2,
        image_size=8,
        base_width=4,
        channel_mults=(1, 2),
        blocks_per_level=1,
        sinusoidal_dim=4,
        time_dim=8,
        timesteps=1000,
    )


@pytest.fixture
def tiny_condnet(tiny_condnet_config: CondNetConfig) -> CondNetLite:
    return CondNetLite(tiny_condnet_config, seed=0)


def pattern_grid(class_id: int, rng: np.random.Generator, size: int = 8) -> np.ndarray:
    """Class pattern plus a little noise: horizontal bands, vertical bands or a centre blob."""
    yy, xx = np.mgrid[0:size, 0:size]
    pattern = class_id % 3
    if pattern == 0:
        base = np.where((yy // 2) % 2 == 0, 0.8, -0.8)
    elif pattern == 1:
        base = np.where((xx // 2) % 2 == 0, 0.8, -0.8)
    else:
        centre = (size - 1) / 2.0
        base = 1.6 * np.exp(-((yy - centre) ** 2 + (xx - centre) ** 2) / (size / 2.0)) - 0.8
    grid = base + 0.05 * rng.standard_normal((size, size))
    return np.clip(grid, -1.0, 1.0).astype(np.float32)


@pytest.fixture
def pattern_dataset() -> list[LabeledSample]:
    """Two separable classes of 8x8 patterns spread over 4 folds"""
    rng = np.random.default_rng(0)
    return [
        LabeledSample(pattern_grid(i % 2, rng), class_id=i % 2, fold=(i // 2) % 4 + 1)
        for i in range(32)
    ]


@pytest.fixture
def fast_train_config() -> TrainConfig:
    return TrainConfig(epochs=3, batch_size=8, seed=0)


@pytest.fixture
def fast_classifier_config() -> ClassifierConfig:
    return ClassifierConfig(
        epochs=60,
        batch_size=8,
        base_width=4,
        label_smoothing=0.0,
        optimizer=AdamWConfig(lr=1e-2, weight_decay=0.0),
        seed=0,
    )
