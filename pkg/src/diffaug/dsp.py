"""Waveform augmentations and log-mel featurization."""
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import librosa
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage, signal

from .config import FeatureConfig
from .exceptions import DSPError
from .numerics.grid import Grid

logger = logging.getLogger(__name__)

TransformName = Literal["noise", "pitch_up", "pitch_down", "time_stretch"]
AmbienceKind = Literal["crowd", "street", "restaurant"]


@dataclass(frozen=True)
class Waveform:
    """Mono audio in [-1, 1] at sample_rate Hz."""

    samples: Grid
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise DSPError(f"sample_rate must be > 0, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise DSPError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise DSPError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


class TransformSpec(BaseModel):
    """One policy entry: a transform and its application probability."""

    model_config = ConfigDict(frozen=True)

    name: TransformName
    probability: float = Field(ge=0.0, le=1.0)


DEFAULT_TRANSFORMS = (
    TransformSpec(name="noise", probability=0.6),
    TransformSpec(name="pitch_up", probability=0.8),
    TransformSpec(name="pitch_down", probability=0.8),
    TransformSpec(name="time_stretch", probability=0.7),
)


class AugmentPolicy(BaseModel):
    """Stochastic augmentation policy.

    Transforms are drawn independently with their probabilities, then
    mutually exclusive pairs are resolved, the count is capped at
    max_transforms and raised to min_transforms. Selected transforms run in
    declaration order.
    """

    model_config = ConfigDict(frozen=True)

    transforms: tuple[TransformSpec, ...] = DEFAULT_TRANSFORMS
    noise_weight: float = Field(0.6, ge=0.0)
    pitch_factor: float = Field(2.0, gt=0.0)
    stretch_min: float = Field(0.8, gt=0.0)
    stretch_max: float = Field(1.25, gt=0.0)
    min_transforms: int = Field(1, ge=0)
    max_transforms: int = Field(2, ge=1)
    exclusive: tuple[tuple[TransformName, TransformName], ...] = (("pitch_up", "pitch_down"),)

    @model_validator(mode="after")
    def _check(self) -> "AugmentPolicy":
        names = [spec.name for spec in self.transforms]
        if len(set(names)) != len(names):
            raise ValueError("transform names must be unique")
        if not self.transforms:
            raise ValueError("policy needs at least one transform")
        if self.min_transforms > self.max_transforms:
            raise ValueError("min_transforms exceeds max_transforms")
        if self.stretch_min > self.stretch_max:
            raise ValueError("stretch_min exceeds stretch_max")
        return self


# -- transforms --------------------------------------------------------------


def mix_noise(
    x: Waveform, ambience: Waveform, weight: float, rng: np.random.Generator
) -> Waveform:
    """Superimpose a random ambience segment of len(x), clamped to [-1, 1].

    Raises:
        DSPError: On sample-rate mismatch or ambience shorter than x.
    """
    if ambience.sample_rate != x.sample_rate:
        raise DSPError(
            f"ambience rate {ambience.sample_rate} Hz differs from signal rate {x.sample_rate} Hz"
        )
    if len(ambience) < len(x):
        raise DSPError(f"ambience has {len(ambience)} samples, need at least {len(x)}")
    offset = int(rng.integers(0, len(ambience) - len(x) + 1))
    segment = ambience.samples[offset : offset + len(x)]
    mixed = np.clip(x.samples + weight * segment, -1.0, 1.0)
    return Waveform(mixed, x.sample_rate)


def pitch_shift(x: Waveform, factor: float) -> Waveform:
    """Multiply frequencies by factor while keeping the duration.

    Runs a phase-vocoder stretch by 1/factor followed by resampling back to
    the original length.
    """
    if factor <= 0:
        raise DSPError(f"pitch factor must be > 0, got {factor}")
    if factor == 1.0:
        return Waveform(x.samples.copy(), x.sample_rate)
    shifted = librosa.effects.pitch_shift(
        x.samples, sr=x.sample_rate, n_steps=12.0 * float(np.log2(factor))
    )
    return Waveform(np.clip(shifted, -1.0, 1.0), x.sample_rate)


def time_stretch(x: Waveform, rate: float) -> Waveform:
    """Phase-vocoder stretch: duration becomes len(x) / rate, pitch unchanged."""
    if rate <= 0:
        raise DSPError(f"stretch rate must be > 0, got {rate}")
    if rate == 1.0:
        return Waveform(x.samples.copy(), x.sample_rate)
    stretched = librosa.effects.time_stretch(x.samples, rate=rate)
    return Waveform(np.clip(stretched, -1.0, 1.0), x.sample_rate)


def draw_transforms(policy: AugmentPolicy, rng: np.random.Generator) -> list[TransformName]:
    """Names of the transforms to apply, in declaration order."""
    order = [spec.name for spec in policy.transforms]
    chosen = [spec.name for spec in policy.transforms if rng.random() < spec.probability]

    for first, second in policy.exclusive:
        if first in chosen and second in chosen:
            chosen.remove((first, second)[int(rng.integers(2))])

    if len(chosen) > policy.max_transforms:
        keep = rng.choice(len(chosen), size=policy.max_transforms, replace=False)
        chosen = [chosen[i] for i in sorted(keep)]

    while len(chosen) < policy.min_transforms:
        blocked = {
            other
            for pair in policy.exclusive
            for name, other in (pair, pair[::-1])
            if name in chosen
        }
        candidates = [name for name in order if name not in chosen and name not in blocked]
        if not candidates:
            break
        chosen.append(candidates[int(rng.integers(len(candidates)))])

    return sorted(chosen, key=order.index)


def apply_policy(
    x: Waveform,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    ambience: Sequence[Waveform] = (),
) -> Waveform:
    """Draw transforms from policy and apply them to x.

    Without ambience clips the noise transform is left out of the draw.
    """
    if not ambience and any(spec.name == "noise" for spec in policy.transforms):
        kept = tuple(spec for spec in policy.transforms if spec.name != "noise")
        policy = policy.model_copy(update={"transforms": kept})
        logger.debug("no ambience clips, noise mixing disabled")
    applied = draw_transforms(policy, rng)
    out = x
    for name in applied:
        if name == "noise":
            clip = ambience[int(rng.integers(len(ambience)))]
            out = mix_noise(out, clip, policy.noise_weight, rng)
        elif name == "pitch_up":
            out = pitch_shift(out, policy.pitch_factor)
        elif name == "pitch_down":
            out = pitch_shift(out, 1.0 / policy.pitch_factor)
        else:
            out = time_stretch(out, float(rng.uniform(policy.stretch_min, policy.stretch_max)))
    logger.debug("applied %s", ", ".join(applied))
    return out


# -- features ----------------------------------------------------------------


def resample_linear(samples: Grid, source_rate: int, target_rate: int) -> Grid:
    """Linear-interpolation resampling (not band-limited)."""
    if source_rate == target_rate or len(samples) == 0:
        return np.asarray(samples, dtype=np.float32)
    count = max(1, int(round(len(samples) * target_rate / source_rate)))
    source_times = np.arange(len(samples)) / source_rate
    target_times = np.arange(count) / target_rate
    return np.interp(target_times, source_times, samples).astype(np.float32)


def mel_spectrogram(x: Waveform, config: FeatureConfig, power: float = 1.0) -> Grid:
    """(n_mels, frames) mel spectrogram of |STFT|**power before log compression."""
    if len(x) == 0:
        raise DSPError("cannot featurize an empty waveform")
    samples = resample_linear(x.samples, x.sample_rate, config.sample_rate)
    return librosa.feature.melspectrogram(
        y=samples,
        sr=config.sample_rate,
        n_fft=config.n_fft,
        hop_length=config.hop_length,
        window="hann",
        n_mels=config.n_mels,
        fmin=config.fmin,
        fmax=config.fmax or config.sample_rate / 2.0,
        power=power,
    )


def featurize(x: Waveform, config: FeatureConfig | None = None) -> Grid:
    """Log-mel grid of shape (n_mels, frames) scaled to [-1, 1].

    Magnitude mel energies S are compressed as log(1 + S / log_floor),
    min-max normalized per sample, and the time axis is linearly resized to
    config.frames. Constant input (including silence) maps to -1 everywhere.
    """
    config = config or FeatureConfig()
    mel = mel_spectrogram(x, config, power=1.0)
    log_mel = np.log1p(mel / config.log_floor)
    low, high = float(log_mel.min()), float(log_mel.max())
    if high - low <= 0:
        normalized = np.full_like(log_mel, -1.0)
    else:
        normalized = 2.0 * (log_mel - low) / (high - low) - 1.0
    resized = ndimage.zoom(normalized, (1.0, config.frames / normalized.shape[1]), order=1)
    return np.clip(resized, -1.0, 1.0).astype(np.float32)


# -- ambience ----------------------------------------------------------------

_AMBIENCE_BANDS: dict[str, tuple[float, float]] = {
    "crowd": (300.0, 3400.0),
    "street": (40.0, 900.0),
    "restaurant": (150.0, 5000.0),
}


def synthesize_ambience(
    kind: AmbienceKind,
    seconds: float = 60.0,
    sample_rate: int = 22050,
    rng: np.random.Generator | None = None,
) -> Waveform:
    """Band-filtered noise standing in for a recorded ambience clip.

    crowd is slowly amplitude-modulated speech-band noise, street is low
    rumble, restaurant adds sparse transient clicks. Peak level is 0.5.
    """
    if kind not in _AMBIENCE_BANDS:
        raise DSPError(f"unknown ambience kind {kind!r}")
    if seconds <= 0:
        raise DSPError(f"ambience duration must be > 0, got {seconds}")
    rng = rng or np.random.default_rng(0)
    count = int(seconds * sample_rate)
    low, high = _AMBIENCE_BANDS[kind]
    high = min(high, 0.45 * sample_rate)
    sos = signal.butter(4, (low, high), btype="bandpass", fs=sample_rate, output="sos")
    noise = signal.sosfilt(sos, rng.standard_normal(count))
    times = np.arange(count) / sample_rate
    if kind == "crowd":
        noise *= 0.6 + 0.4 * np.sin(2.0 * np.pi * 0.7 * times + rng.uniform(0, 2 * np.pi))
    elif kind == "restaurant":
        clicks = np.zeros(count)
        positions = rng.integers(0, count, size=max(1, int(seconds * 3)))
        clicks[positions] = rng.uniform(2.0, 5.0, size=positions.size)
        noise += signal.sosfilt(sos, clicks)
    peak = float(np.max(np.abs(noise))) or 1.0
    return Waveform((0.5 * noise / peak).astype(np.float32), sample_rate)
