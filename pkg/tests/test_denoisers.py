"""
Unit tests for the closed-form denoisers, CondNetLite and checkpoints.
"""

import numpy as np
import pytest

from diffaug.config import CondNetConfig
from diffaug.denoisers import (
    AnalyticConditionalModel,
    AnalyticGaussianModel,
    AnalyticMixtureModel,
    CondNetLite,
    EpsilonModel,
    GaussianData,
    MixtureComponent,
    analytic_gaussian_eps,
    analytic_mixture_eps,
    condnet_predict,
    load_checkpoint,
    save_checkpoint,
)
from diffaug.exceptions import CheckpointError, ConfigError, LabelError, ShapeError

# ============================================================================
# Closed-form denoisers
# ============================================================================


class TestAnalyticGaussian:
    """Tests for the Gaussian oracle"""

    def test_formula(self, schedule, gaussian_model):
        t = 250
        x_t = np.array([[0.4], [2.0]])
        alpha = schedule.marginal_alpha(t)
        sigma = schedule.marginal_sigma(t)
        expected = sigma * (x_t - alpha * 3.0) / (alpha**2 * 0.25 + sigma**2)
        np.testing.assert_allclose(gaussian_model.predict(x_t, t), expected, rtol=1e-12)

    def test_point_mass_recovers_noise(self, schedule):
        """For a point mass eps is identified exactly"""
        model = AnalyticGaussianModel(mu=-1.0, sigma0=0.0, schedule=schedule)
        eps = np.array([[0.3], [-1.2]])
        x_t = schedule.marginal_alpha(600) * -1.0 + schedule.marginal_sigma(600) * eps
        np.testing.assert_allclose(model.predict(x_t, 600), eps, atol=1e-10)

    def test_fractional_and_per_row_time(self, schedule, gaussian_model):
        x_t = np.ones((2, 1))
        per_row = gaussian_model.predict(x_t, np.array([10.5, 900.25]))
        assert per_row[0, 0] == pytest.approx(gaussian_model.predict(x_t[:1], 10.5)[0, 0])
        assert per_row[1, 0] == pytest.approx(gaussian_model.predict(x_t[:1], 900.25)[0, 0])

    def test_function_form(self, schedule, gaussian_model):
        x_t = np.zeros((3, 1))
        np.testing.assert_array_equal(
            analytic_gaussian_eps(gaussian_model, x_t, 5, schedule), gaussian_model.predict(x_t, 5)
        )

    def test_negative_sigma(self, schedule):
        with pytest.raises(ConfigError):
            AnalyticGaussianModel(mu=0.0, sigma0=-0.1, schedule=schedule)

    def test_satisfies_protocol(self, gaussian_model):
        assert isinstance(gaussian_model, EpsilonModel)

    def test_data_entropy(self):
        assert GaussianData(0.0, 1.0).entropy() == pytest.approx(0.5 * np.log(2 * np.pi * np.e))
        assert GaussianData(0.0, 0.0).entropy() == float("-inf")


class TestAnalyticMixture:
    """Tests for the Gaussian-mixture oracle"""

    @pytest.fixture
    def mixture(self, schedule):
        return AnalyticMixtureModel.equal_weights([(-4.0, 0.3), (4.0, 0.3)], schedule)

    def test_weights_must_sum_to_one(self, schedule):
        with pytest.raises(ConfigError):
            AnalyticMixtureModel(
                (MixtureComponent(0.5, 0.0, 1.0), MixtureComponent(0.6, 1.0, 1.0)), schedule
            )

    def test_weights_must_be_positive(self, schedule):
        with pytest.raises(ConfigError):
            AnalyticMixtureModel(
                (MixtureComponent(1.5, 0.0, 1.0), MixtureComponent(-0.5, 1.0, 1.0)), schedule
            )

    def test_single_component_is_gaussian(self, schedule, gaussian_model):
        mixture = AnalyticMixtureModel((MixtureComponent(1.0, 3.0, 0.5),), schedule)
        x_t = np.linspace(-2, 4, 7).reshape(-1, 1)
        np.testing.assert_allclose(
            mixture.predict(x_t, 300), gaussian_model.predict(x_t, 300), rtol=1e-12
        )

    def test_far_basin_matches_component(self, schedule, mixture):
        """Deep inside one component's basin the mixture equals that component"""
        x_t = np.array([[3.9]])
        component = AnalyticGaussianModel(mu=4.0, sigma0=0.3, schedule=schedule)
        np.testing.assert_allclose(
            analytic_mixture_eps(mixture, x_t, 20, schedule),
            component.predict(x_t, 20),
            atol=1e-6,
        )

    def test_responsibilities_sum_to_one(self, mixture):
        x_t = np.random.default_rng(0).standard_normal((5, 1)) * 3
        resp = mixture.responsibilities(x_t, 400)
        assert resp.shape == (5, 2)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0)

    def test_symmetric_midpoint(self, mixture):
        """Equal components make the midpoint posterior a coin flip"""
        np.testing.assert_allclose(mixture.responsibilities(np.zeros((1, 1)), 100), [[0.5, 0.5]])

    def test_stable_for_distant_points(self, mixture):
        """Log densities far in the tails do not overflow"""
        out = mixture.predict(np.array([[1e3]]), 5)
        assert np.all(np.isfinite(out))


class TestAnalyticConditional:
    """Tests for the per-class oracle with a null branch"""

    @pytest.fixture
    def model(self, schedule):
        return AnalyticConditionalModel(((-2.0, 0.5), (2.0, 0.5)), schedule)

    def test_class_rows_use_class_gaussian(self, schedule, model):
        x_t = np.array([[0.5], [0.5]])
        out = model.predict(x_t, 100, np.array([0, 1]))
        for row, mu in enumerate((-2.0, 2.0)):
            expected = AnalyticGaussianModel(mu=mu, sigma0=0.5, schedule=schedule).predict(
                x_t[row : row + 1], 100
            )
            np.testing.assert_allclose(out[row : row + 1], expected, rtol=1e-12)

    def test_null_label_is_unconditional(self, model):
        x_t = np.array([[0.7]])
        np.testing.assert_allclose(
            model.predict(x_t, 100, np.array([model.num_classes])), model.predict(x_t, 100, None)
        )

    @pytest.mark.parametrize("labels", [np.array([3]), np.array([-1]), np.array([0, 1])])
    def test_bad_labels(self, model, labels):
        with pytest.raises(LabelError):
            model.predict(np.zeros((1, 1)), 10, labels)


# ============================================================================
# CondNetLite
# ============================================================================


class TestCondNetLite:
    """Tests for the trainable conditional network"""

    def test_output_shape(self, tiny_condnet):
        x = np.zeros((3, 1, 8, 8), dtype=np.float32)
        out = tiny_condnet.predict(x, 100, np.array([0, 1, 2]))
        assert out.shape == x.shape
        assert out.dtype == np.float32

    def test_none_labels_equal_null_label(self, tiny_condnet):
        x = np.random.default_rng(0).standard_normal((2, 1, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(
            tiny_condnet.predict(x, 40, None), tiny_condnet.predict(x, 40, np.array([2, 2]))
        )

    def test_deterministic_initialization(self, tiny_condnet_config):
        a = CondNetLite(tiny_condnet_config, seed=5)
        b = CondNetLite(tiny_condnet_config, seed=5)
        assert list(a.params) == list(b.params)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_parameter_layout(self, tiny_condnet):
        names = list(tiny_condnet.params)
        assert names[0] == "time.freqs"
        assert names[-2:] == ["out.w", "out.b"]
        assert tiny_condnet.params["class.table"].shape == (3, 8)
        assert "up0.block0.conv1.w" in names

    def test_fractional_time(self, tiny_condnet):
        x = np.zeros((1, 1, 8, 8), dtype=np.float32)
        assert np.all(np.isfinite(tiny_condnet.predict(x, 123.75)))

    def test_spatial_dims_must_divide(self, tiny_condnet):
        with pytest.raises(ShapeError):
            tiny_condnet.predict(np.zeros((1, 1, 7, 7), dtype=np.float32), 10)

    def test_channel_mismatch(self, tiny_condnet):
        with pytest.raises(ShapeError):
            tiny_condnet.predict(np.zeros((1, 2, 8, 8), dtype=np.float32), 10)

    def test_label_out_of_range(self, tiny_condnet):
        with pytest.raises(LabelError):
            tiny_condnet.predict(np.zeros((1, 1, 8, 8), dtype=np.float32), 10, np.array([3]))

    def test_label_count_mismatch(self, tiny_condnet):
        with pytest.raises(LabelError):
            tiny_condnet.predict(np.zeros((2, 1, 8, 8), dtype=np.float32), 10, np.array([0]))

    def test_single_grid_helper(self, tiny_condnet):
        grid = np.zeros((1, 8, 8), dtype=np.float32)
        single = condnet_predict(tiny_condnet, grid, 50, 1)
        batched = tiny_condnet.predict(grid[None], 50, np.array([1]))
        np.testing.assert_array_equal(single, batched[0])

    def test_missing_parameter(self, tiny_condnet_config, tiny_condnet):
        params = dict(tiny_condnet.params)
        params.pop("stem.w")
        with pytest.raises(ShapeError):
            CondNetLite(tiny_condnet_config, params)

    def test_invalid_resolution(self):
        with pytest.raises(ValueError):
            CondNetConfig(num_classes=2, image_size=6, channel_mults=(1, 2, 4))

    def test_checkpoint_round_trip(self, tmp_path, tiny_condnet):
        path = tmp_path / "denoiser.ckpt"
        tiny_condnet.save(path)
        loaded = CondNetLite.load(path)
        assert loaded.config == tiny_condnet.config
        x = np.random.default_rng(1).standard_normal((2, 1, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(
            loaded.predict(x, 300, np.array([0, 1])), tiny_condnet.predict(x, 300, np.array([0, 1]))
        )


# ============================================================================
# Checkpoint format
# ============================================================================


class TestCheckpointFormat:
    """Tests for the binary checkpoint layout"""

    @pytest.fixture
    def written(self, tmp_path, tiny_condnet):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, b"DENW", tiny_condnet.config, tiny_condnet.params)
        return path

    def test_header(self, written):
        data = written.read_bytes()
        assert data[:4] == b"DENW"
        assert int.from_bytes(data[4:8], "little") == 1

    def test_parameter_order_preserved(self, written, tiny_condnet):
        _, params = load_checkpoint(written, b"DENW")
        assert list(params) == list(tiny_condnet.params)

    def test_wrong_magic(self, written):
        with pytest.raises(CheckpointError):
            load_checkpoint(written, b"DISC")

    def test_truncated(self, written):
        data = written.read_bytes()
        written.write_bytes(data[:-3])
        with pytest.raises(CheckpointError):
            load_checkpoint(written, b"DENW")

    def test_trailing_bytes(self, written):
        written.write_bytes(written.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(written, b"DENW")
