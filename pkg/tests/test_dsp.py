"""
Unit tests for waveform augmentation, ambience synthesis and featurization.
"""

import itertools
import math
from collections import Counter

import numpy as np
import pytest

from diffaug.config import FeatureConfig
from diffaug.dsp import (
    AugmentPolicy,
    TransformSpec,
    Waveform,
    apply_policy,
    draw_transforms,
    featurize,
    mix_noise,
    pitch_shift,
    resample_linear,
    synthesize_ambience,
    time_stretch,
)
from diffaug.exceptions import DSPError

RATE = 22050


def tone(freq: float, seconds: float = 1.0, rate: int = RATE, amplitude: float = 0.5) -> Waveform:
    times = np.arange(int(seconds * rate)) / rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq * times), rate)


def peak_frequency(x: Waveform) -> float:
    spectrum = np.abs(np.fft.rfft(x.samples * np.hanning(len(x))))
    return float(np.fft.rfftfreq(len(x), 1.0 / x.sample_rate)[np.argmax(spectrum)])


@pytest.fixture
def small_features() -> FeatureConfig:
    return FeatureConfig(n_fft=512, hop_length=128, n_mels=32, frames=24)


def exact_rates(policy: AugmentPolicy) -> dict[str, float]:
    """Per-transform application probabilities, enumerating every branch of the draw rule."""
    names = [spec.name for spec in policy.transforms]
    rates = dict.fromkeys(names, 0.0)

    def fill(chosen: list[str], weight: float) -> None:
        blocked = {
            other
            for pair in policy.exclusive
            for name, other in (pair, pair[::-1])
            if name in chosen
        }
        candidates = [name for name in names if name not in chosen and name not in blocked]
        if len(chosen) >= policy.min_transforms or not candidates:
            for name in chosen:
                rates[name] += weight
            return
        for name in candidates:
            fill([*chosen, name], weight / len(candidates))

    def cap(chosen: list[str], weight: float) -> None:
        if len(chosen) <= policy.max_transforms:
            fill(chosen, weight)
            return
        subsets = list(itertools.combinations(chosen, policy.max_transforms))
        for subset in subsets:
            fill(list(subset), weight / len(subsets))

    def exclude(chosen: list[str], pairs: list[tuple[str, str]], weight: float) -> None:
        if not pairs:
            cap(chosen, weight)
            return
        (first, second), rest = pairs[0], pairs[1:]
        if first in chosen and second in chosen:
            for dropped in (first, second):
                exclude([n for n in chosen if n != dropped], rest, weight / 2)
        else:
            exclude(chosen, rest, weight)

    for mask in itertools.product((False, True), repeat=len(names)):
        weight = math.prod(
            spec.probability if drawn else 1.0 - spec.probability
            for spec, drawn in zip(policy.transforms, mask, strict=True)
        )
        drawn_names = [name for name, drawn in zip(names, mask, strict=True) if drawn]
        exclude(drawn_names, list(policy.exclusive), weight)
    return rates


# ============================================================================
# Waveform
# ============================================================================


class TestWaveform:
    """Tests for waveform validation"""

    def test_casts_to_float32(self):
        x = Waveform(np.zeros(4, dtype=np.float64), 8000)
        assert x.samples.dtype == np.float32
        assert x.duration == pytest.approx(4 / 8000)

    @pytest.mark.parametrize(
        "samples, rate",
        [(np.zeros(4), 0), (np.zeros((2, 2)), 8000), (np.array([0.0, np.nan]), 8000)],
    )
    def test_invalid(self, samples, rate):
        with pytest.raises(DSPError):
            Waveform(samples, rate)


# ============================================================================
# Policy draws
# ============================================================================


class TestDrawTransforms:
    """Tests for the stochastic transform selection"""

    def test_default_policy_invariants(self):
        """Pitch up and down never co-occur and one or two transforms run"""
        policy = AugmentPolicy()
        rng = np.random.default_rng(0)
        order = [spec.name for spec in policy.transforms]
        for _ in range(10_000):
            chosen = draw_transforms(policy, rng)
            assert 1 <= len(chosen) <= 2
            assert not {"pitch_up", "pitch_down"} <= set(chosen)
            assert chosen == sorted(chosen, key=order.index)

    def test_every_transform_reachable(self):
        policy = AugmentPolicy()
        rng = np.random.default_rng(1)
        seen = Counter(name for _ in range(2000) for name in draw_transforms(policy, rng))
        assert set(seen) == {"noise", "pitch_up", "pitch_down", "time_stretch"}
        assert seen["pitch_up"] == pytest.approx(seen["pitch_down"], rel=0.15)

    def test_application_rates_match_rule(self):
        """Empirical per-transform rates agree with the enumerated rule within 1%"""
        policy = AugmentPolicy()
        rng = np.random.default_rng(3)
        draws = 100_000
        seen = Counter(name for _ in range(draws) for name in draw_transforms(policy, rng))
        expected = exact_rates(policy)
        assert sum(seen.values()) / draws == pytest.approx(sum(expected.values()), abs=0.01)
        for name, rate in expected.items():
            assert seen[name] / draws == pytest.approx(rate, abs=0.01)

    def test_exact_rates_sum_for_capped_policy(self):
        """With every transform certain, the cap keeps exactly two"""
        policy = AugmentPolicy(
            transforms=tuple(
                TransformSpec(name=name, probability=1.0)
                for name in ("noise", "pitch_up", "pitch_down", "time_stretch")
            )
        )
        assert sum(exact_rates(policy).values()) == pytest.approx(2.0)

    def test_certain_transforms_resolve_exclusion(self):
        policy = AugmentPolicy(
            transforms=tuple(
                TransformSpec(name=name, probability=1.0)
                for name in ("noise", "pitch_up", "pitch_down", "time_stretch")
            ),
            max_transforms=4,
        )
        chosen = draw_transforms(policy, np.random.default_rng(0))
        assert len(chosen) == 3
        assert {"noise", "time_stretch"} <= set(chosen)

    def test_minimum_fills_from_remaining(self):
        """With nothing drawn, one transform is picked uniformly"""
        policy = AugmentPolicy(
            transforms=(
                TransformSpec(name="noise", probability=0.0),
                TransformSpec(name="time_stretch", probability=0.0),
            )
        )
        rng = np.random.default_rng(2)
        counts = Counter(tuple(draw_transforms(policy, rng)) for _ in range(1000))
        assert set(counts) == {("noise",), ("time_stretch",)}
        assert counts[("noise",)] == pytest.approx(500, abs=80)

    def test_zero_minimum_allows_identity(self):
        policy = AugmentPolicy(
            transforms=(TransformSpec(name="noise", probability=0.0),), min_transforms=0
        )
        assert draw_transforms(policy, np.random.default_rng(0)) == []

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"min_transforms": 3, "max_transforms": 2},
            {"stretch_min": 1.5, "stretch_max": 1.2},
            {"transforms": ()},
            {
                "transforms": (
                    TransformSpec(name="noise", probability=0.5),
                    TransformSpec(name="noise", probability=0.2),
                )
            },
        ],
    )
    def test_invalid_policy(self, kwargs):
        with pytest.raises(ValueError):
            AugmentPolicy(**kwargs)


# ============================================================================
# Transforms
# ============================================================================


class TestTransforms:
    """Tests for the individual waveform transforms"""

    @pytest.mark.parametrize("factor, expected", [(2.0, 880.0), (0.5, 220.0)])
    def test_pitch_shift_moves_peak(self, factor, expected):
        shifted = pitch_shift(tone(440.0), factor)
        assert len(shifted) == RATE
        assert peak_frequency(shifted) == pytest.approx(expected, rel=0.03)

    @pytest.mark.parametrize("factor", [2.0, 1.5])
    def test_pitch_shift_round_trip(self, factor):
        """Shifting by f then 1/f brings a tone back to its frequency"""
        restored = pitch_shift(pitch_shift(tone(440.0), factor), 1.0 / factor)
        assert len(restored) == RATE
        assert peak_frequency(restored) == pytest.approx(440.0, rel=0.03)

    def test_pitch_shift_identity(self):
        x = tone(300.0, 0.1)
        np.testing.assert_array_equal(pitch_shift(x, 1.0).samples, x.samples)

    @pytest.mark.parametrize("rate", [0.8, 1.25])
    def test_time_stretch_duration(self, rate):
        x = tone(440.0)
        stretched = time_stretch(x, rate)
        assert abs(len(stretched) - len(x) / rate) <= 512
        assert peak_frequency(stretched) == pytest.approx(440.0, rel=0.03)

    def test_invalid_factors(self):
        with pytest.raises(DSPError):
            pitch_shift(tone(440.0, 0.1), 0.0)
        with pytest.raises(DSPError):
            time_stretch(tone(440.0, 0.1), -1.0)

    def test_mix_noise_is_clamped(self):
        x = Waveform(np.full(100, 0.9), 8000)
        ambience = Waveform(np.full(400, 0.5), 8000)
        mixed = mix_noise(x, ambience, 1.0, np.random.default_rng(0))
        assert len(mixed) == 100
        assert mixed.samples.max() == 1.0

    def test_mix_noise_zero_weight(self):
        x = tone(200.0, 0.05, rate=8000)
        ambience = synthesize_ambience("street", 1.0, 8000)
        mixed = mix_noise(x, ambience, 0.0, np.random.default_rng(0))
        np.testing.assert_allclose(mixed.samples, x.samples)

    def test_mix_noise_rate_mismatch(self):
        with pytest.raises(DSPError):
            mix_noise(
                Waveform(np.zeros(10), 8000),
                Waveform(np.zeros(100), 16000),
                0.5,
                np.random.default_rng(0),
            )

    def test_mix_noise_short_ambience(self):
        with pytest.raises(DSPError):
            mix_noise(
                Waveform(np.zeros(100), 8000),
                Waveform(np.zeros(10), 8000),
                0.5,
                np.random.default_rng(0),
            )

    def test_apply_policy_without_ambience_skips_noise(self):
        x = tone(440.0, 0.1)
        policy = AugmentPolicy(transforms=(TransformSpec(name="noise", probability=1.0),))
        out = apply_policy(x, policy, np.random.default_rng(0))
        np.testing.assert_array_equal(out.samples, x.samples)

    def test_apply_policy_without_ambience_still_augments(self):
        """The minimum count is met from the remaining transforms"""
        x = tone(440.0, 0.25)
        policy = AugmentPolicy(
            transforms=(
                TransformSpec(name="noise", probability=1.0),
                TransformSpec(name="time_stretch", probability=0.0),
            )
        )
        out = apply_policy(x, policy, np.random.default_rng(0))
        assert len(out) != len(x)

    def test_apply_policy_deterministic(self):
        x = tone(440.0, 0.5)
        ambience = [synthesize_ambience("crowd", 2.0, RATE)]
        a = apply_policy(x, AugmentPolicy(), np.random.default_rng(5), ambience)
        b = apply_policy(x, AugmentPolicy(), np.random.default_rng(5), ambience)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert np.abs(a.samples).max() <= 1.0


# ============================================================================
# Ambience
# ============================================================================


class TestAmbience:
    """Tests for synthetic ambience clips"""

    @pytest.mark.parametrize("kind", ["crowd", "street", "restaurant"])
    def test_peak_and_length(self, kind):
        clip = synthesize_ambience(kind, 2.0, 16000)
        assert len(clip) == 32000
        assert np.abs(clip.samples).max() == pytest.approx(0.5, rel=1e-5)

    def test_seeded(self):
        a = synthesize_ambience("crowd", 1.0, 8000, np.random.default_rng(3))
        b = synthesize_ambience("crowd", 1.0, 8000, np.random.default_rng(3))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_street_is_low_frequency(self):
        clip = synthesize_ambience("street", 4.0, 16000)
        assert peak_frequency(clip) < 1000.0

    def test_invalid(self):
        with pytest.raises(DSPError):
            synthesize_ambience("ocean", 1.0)
        with pytest.raises(DSPError):
            synthesize_ambience("crowd", 0.0)


# ============================================================================
# Features
# ============================================================================


class TestFeaturize:
    """Tests for log-mel featurization"""

    def test_shape_and_range(self, small_features):
        grid = featurize(tone(1000.0), small_features)
        assert grid.shape == (32, 24)
        assert grid.dtype == np.float32
        assert -1.0 <= grid.min() < -0.9
        assert 0.9 < grid.max() <= 1.0

    def test_tone_energy_in_expected_band(self, small_features):
        """A low tone peaks in a lower mel band than a high tone"""
        low = featurize(tone(300.0), small_features).mean(axis=1).argmax()
        high = featurize(tone(5000.0), small_features).mean(axis=1).argmax()
        assert low < high

    def test_silence_maps_to_floor(self, small_features):
        grid = featurize(Waveform(np.zeros(RATE), RATE), small_features)
        np.testing.assert_array_equal(grid, -1.0)

    def test_other_sample_rates_are_resampled(self, small_features):
        grid = featurize(tone(1000.0, rate=44100), small_features)
        assert grid.shape == (32, 24)

    def test_empty_waveform(self, small_features):
        with pytest.raises(DSPError):
            featurize(Waveform(np.zeros(0), RATE), small_features)

    def test_resample_linear_length(self):
        out = resample_linear(np.zeros(440, dtype=np.float32), 44100, 22050)
        assert out.shape == (220,)
