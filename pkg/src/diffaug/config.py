"""Configuration models for diffaug.

Library components take small pydantic models; the CLI resolves one flat
RunConfig (flags > config file > DIFFAUG_ environment > defaults) and derives
the component models from it.
"""
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

SolverMethod = Literal["ancestral", "first_order", "dpm2s", "dpm2m"]
ThresholdMode = Literal["none", "static", "dynamic"]
Prediction = Literal["data", "noise"]
Spacing = Literal["uniform_t", "uniform_lambda"]
ReverseVariance = Literal["posterior", "beta"]


class AdamWConfig(BaseModel):
    """AdamW hyperparameters; defaults follow the reference training setup."""

    model_config = ConfigDict(frozen=True)

    lr: float = Field(1e-4, gt=0.0)
    weight_decay: float = Field(0.05, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


class TrainConfig(BaseModel):
    """Denoiser training loop settings."""

    model_config = ConfigDict(frozen=True)

    epochs: int = Field(500, ge=1)
    batch_size: int = Field(16, ge=1)
    label_dropout_probability: float = Field(0.1, ge=0.0, le=1.0)
    optimizer: AdamWConfig = AdamWConfig()
    reverse_variance: ReverseVariance = "posterior"
    seed: int = 0
    workers: int = Field(1, ge=1)


class ClassifierConfig(BaseModel):
    """Discriminator / evaluation classifier training settings."""

    model_config = ConfigDict(frozen=True)

    epochs: int = Field(500, ge=1)
    batch_size: int = Field(30, ge=1)
    label_smoothing: float = Field(0.1, ge=0.0, lt=1.0)
    base_width: int = Field(16, ge=1)
    optimizer: AdamWConfig = AdamWConfig()
    seed: int = 0
    workers: int = Field(1, ge=1)


class ThresholdConfig(BaseModel):
    """Clipping applied to data predictions inside the solvers."""

    model_config = ConfigDict(frozen=True)

    mode: ThresholdMode = "none"
    bound: float = Field(1.0, gt=0.0)
    percentile: float = Field(0.995, gt=0.0, le=1.0)


class SolverConfig(BaseModel):
    """Reverse-time sampler settings."""

    model_config = ConfigDict(frozen=True)

    method: SolverMethod = "dpm2m"
    num_steps: int = Field(20, ge=1)
    guidance_scale: float = Field(0.0, ge=-1.0)
    thresholding: ThresholdConfig = ThresholdConfig()
    prediction: Prediction = "data"
    spacing: Spacing = "uniform_t"
    reverse_variance: ReverseVariance = "posterior"
    seed: int = 0
    workers: int = Field(1, ge=1)
    chunk_size: int = Field(64, ge=1)


class FeatureConfig(BaseModel):
    """Log-mel featurization settings."""

    model_config = ConfigDict(frozen=True)

    sample_rate: int = Field(22050, gt=0)
    n_fft: int = Field(1024, gt=0)
    hop_length: int = Field(256, gt=0)
    n_mels: int = Field(128, gt=0)
    frames: int = Field(128, gt=0)
    fmin: float = Field(20.0, ge=0.0)
    fmax: float | None = None
    log_floor: float = Field(1e-3, gt=0.0)


class CondNetConfig(BaseModel):
    """Architecture of the conditional U-shaped epsilon network."""

    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(ge=1)
    image_size: int = Field(32, ge=1)
    in_channels: int = Field(1, ge=1)
    base_width: int = Field(16, ge=1)
    channel_mults: tuple[int, ...] = (1, 2, 4, 8)
    blocks_per_level: int = Field(2, ge=1)
    sinusoidal_dim: int = Field(16, ge=2)
    time_dim: int = Field(64, ge=1)
    timesteps: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _check_resolution(self) -> "CondNetConfig":
        if not self.channel_mults:
            raise ValueError("channel_mults must not be empty")
        factor = 2 ** (len(self.channel_mults) - 1)
        if self.image_size % factor:
            raise ValueError(f"image_size {self.image_size} is not divisible by {factor}")
        if self.sinusoidal_dim % 2:
            raise ValueError("sinusoidal_dim must be even")
        return self


class ClassifierNetConfig(BaseModel):
    """Architecture of the convolutional discriminator / evaluation classifier."""

    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(ge=2)
    in_channels: int = Field(1, ge=1)
    base_width: int = Field(16, ge=1)


def _split_ints(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
    return value


ChannelMults = Annotated[tuple[int, ...], BeforeValidator(_split_ints)]


class RunConfig(BaseSettings):
    """Flat settings for one CLI run.

    Values come from CLI flags, then a ``key = value`` config file, then
    ``DIFFAUG_``-prefixed environment variables (``DIFFAUG_SEED`` and friends),
    then the defaults below. Unknown keys are rejected.

    Example:
        DIFFAUG_SEED=7
        DIFFAUG_STEPS=20
    """

    model_config = SettingsConfigDict(
        env_prefix="DIFFAUG_",
        case_sensitive=False,
        extra="forbid",
    )

    seed: int = 0
    out: Path = Path("runs")
    workers: int = Field(1, ge=1)

    # schedule
    timesteps: int = Field(1000, ge=1)
    beta_start: float = Field(1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(0.02, gt=0.0, lt=1.0)

    # features
    sample_rate: int = Field(22050, gt=0)
    n_fft: int = Field(1024, gt=0)
    hop_length: int = Field(256, gt=0)
    n_mels: int = Field(128, gt=0)
    frames: int = Field(128, gt=0)
    fmin: float = Field(20.0, ge=0.0)
    log_floor: float = Field(1e-3, gt=0.0)
    image_size: int = Field(128, ge=1)

    # traditional augmentation
    augment_copies: int = Field(1, ge=1)
    ambience_weight: float = Field(0.6, ge=0.0)

    # denoiser
    base_width: int = Field(16, ge=1)
    channel_mults: ChannelMults = (1, 2, 4, 8)
    blocks_per_level: int = Field(2, ge=1)
    sinusoidal_dim: int = Field(16, ge=2)
    time_dim: int = Field(64, ge=1)
    dpm_epochs: int = Field(500, ge=1)
    dpm_batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-4, gt=0.0)
    weight_decay: float = Field(0.05, ge=0.0)
    label_dropout: float = Field(0.1, ge=0.0, le=1.0)
    reverse_variance: ReverseVariance = "posterior"

    # sampling
    method: SolverMethod = "dpm2m"
    steps: int = Field(20, ge=1)
    guidance_w: float = Field(0.0, ge=-1.0)
    threshold: ThresholdMode = "none"
    threshold_bound: float = Field(1.0, gt=0.0)
    threshold_percentile: float = Field(0.995, gt=0.0, le=1.0)
    prediction: Prediction = "data"
    spacing: Spacing = "uniform_t"

    # discriminator / classifier
    clf_epochs: int = Field(500, ge=1)
    clf_batch_size: int = Field(30, ge=1)
    clf_width: int = Field(16, ge=1)
    label_smoothing: float = Field(0.1, ge=0.0, lt=1.0)
    k: int = Field(1, ge=1)
    discriminator_data: Literal["augmented", "entire"] = "augmented"
    folds: int = Field(10, ge=1)

    def optimizer(self) -> AdamWConfig:
        return AdamWConfig(lr=self.lr, weight_decay=self.weight_decay)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.dpm_epochs,
            batch_size=self.dpm_batch_size,
            label_dropout_probability=self.label_dropout,
            optimizer=self.optimizer(),
            reverse_variance=self.reverse_variance,
            seed=self.seed,
            workers=self.workers,
        )

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            epochs=self.clf_epochs,
            batch_size=self.clf_batch_size,
            label_smoothing=self.label_smoothing,
            base_width=self.clf_width,
            optimizer=self.optimizer(),
            seed=self.seed,
            workers=self.workers,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            method=self.method,
            num_steps=self.steps,
            guidance_scale=self.guidance_w,
            thresholding=ThresholdConfig(
                mode=self.threshold,
                bound=self.threshold_bound,
                percentile=self.threshold_percentile,
            ),
            prediction=self.prediction,
            spacing=self.spacing,
            reverse_variance=self.reverse_variance,
            seed=self.seed,
            workers=self.workers,
        )

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            sample_rate=self.sample_rate,
            n_fft=self.n_fft,
            hop_length=self.hop_length,
            n_mels=self.n_mels,
            frames=self.frames,
            fmin=self.fmin,
            log_floor=self.log_floor,
        )

    def condnet_config(self, num_classes: int) -> CondNetConfig:
        return CondNetConfig(
            num_classes=num_classes,
            image_size=self.image_size,
            base_width=self.base_width,
            channel_mults=self.channel_mults,
            blocks_per_level=self.blocks_per_level,
            sinusoidal_dim=self.sinusoidal_dim,
            time_dim=self.time_dim,
            timesteps=self.timesteps,
        )
