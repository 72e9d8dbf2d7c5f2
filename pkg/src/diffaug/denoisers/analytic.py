"""Closed-form epsilon predictors for Gaussian and Gaussian-mixture data.

For data x0 ~ N(mu, sigma0^2 I) and x_t = alpha x0 + sigma eps the posterior
mean of eps given x_t is linear in x_t:

    E[eps | x_t] = sigma (x_t - alpha mu) / (alpha^2 sigma0^2 + sigma^2)

These models are exact Bayes-optimal denoisers and serve as verification
oracles for the losses and solvers. Inputs carry a leading batch axis; mu
broadcasts over it.
"""
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp, softmax

from ..exceptions import ConfigError, LabelError
from ..numerics.grid import Grid, LabelArray, broadcast_rows
from ..schedule import NoiseSchedule


@dataclass(frozen=True)
class GaussianData:
    """Isotropic Gaussian data law N(mu, sigma0^2 I)."""

    mu: float | Grid
    sigma0: float

    def __post_init__(self) -> None:
        if self.sigma0 < 0:
            raise ConfigError(f"sigma0 must be >= 0, got {self.sigma0}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(np.shape(self.mu))

    def sample(
        self, rng: np.random.Generator, n: int, shape: tuple[int, ...] | None = None
    ) -> Grid:
        """Draw n samples of the given per-sample shape (defaults to mu's shape)."""
        shape = self.shape if shape is None else shape
        return np.asarray(self.mu) + self.sigma0 * rng.standard_normal((n, *shape))

    def entropy(self, numel: int = 1) -> float:
        """Differential entropy in nats of numel independent elements."""
        if self.sigma0 == 0:
            return float("-inf")
        return 0.5 * numel * float(np.log(2.0 * np.pi * np.e * self.sigma0**2))


def _coefficients(schedule: NoiseSchedule, t: Any, like: Grid) -> tuple[Any, Any]:
    alpha = broadcast_rows(schedule.marginal_alpha(t), like)
    sigma = broadcast_rows(schedule.marginal_sigma(t), like)
    return alpha, sigma


def _gaussian_eps(
    mu: float | Grid, sigma0: float, x_t: Grid, alpha: Any, sigma: Any
) -> Grid:
    return sigma * (x_t - alpha * np.asarray(mu)) / (alpha**2 * sigma0**2 + sigma**2)


def _log_marginal(
    mu: float | Grid, sigma0: float, x_t: Grid, alpha: Any, sigma: Any
) -> Grid:
    """Per-row log density of x_t under N(alpha mu, (alpha^2 sigma0^2 + sigma^2) I)."""
    variance = alpha**2 * sigma0**2 + sigma**2
    residual = x_t - alpha * np.asarray(mu)
    elementwise = residual**2 / variance + np.log(2.0 * np.pi * variance)
    axes = tuple(range(1, x_t.ndim))
    return -0.5 * np.sum(np.broadcast_to(elementwise, x_t.shape), axis=axes, dtype=np.float64)


@dataclass(frozen=True)
class AnalyticGaussianModel:
    """Exact denoiser for GaussianData under a fixed schedule."""

    mu: float | Grid
    sigma0: float
    schedule: NoiseSchedule
    num_classes: int | None = None

    def __post_init__(self) -> None:
        if self.sigma0 < 0:
            raise ConfigError(f"sigma0 must be >= 0, got {self.sigma0}")

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(np.shape(self.mu)) or (1,)

    @classmethod
    def from_data(cls, data: GaussianData, schedule: NoiseSchedule) -> "AnalyticGaussianModel":
        return cls(mu=data.mu, sigma0=data.sigma0, schedule=schedule)

    @property
    def data(self) -> GaussianData:
        return GaussianData(mu=self.mu, sigma0=self.sigma0)

    def predict(self, x_t: Grid, t: Any, labels: LabelArray | None = None) -> Grid:
        return analytic_gaussian_eps(self, x_t, t, self.schedule)


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mu: float | Grid
    sigma0: float


@dataclass(frozen=True)
class AnalyticMixtureModel:
    """Exact denoiser for a finite mixture of isotropic Gaussians.

    Raises:
        ConfigError: If a weight is not positive, weights do not sum to 1
            within 1e-9, or a sigma0 is negative.
    """

    components: tuple[MixtureComponent, ...]
    schedule: NoiseSchedule
    num_classes: int | None = None

    def __post_init__(self) -> None:
        if not self.components:
            raise ConfigError("mixture needs at least one component")
        weights = np.array([c.weight for c in self.components], dtype=np.float64)
        if np.any(weights <= 0):
            raise ConfigError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ConfigError(f"mixture weights sum to {weights.sum():.12g}, not 1")
        if any(c.sigma0 < 0 for c in self.components):
            raise ConfigError("component sigma0 must be >= 0")

    @classmethod
    def equal_weights(
        cls, params: Sequence[tuple[float | Grid, float]], schedule: NoiseSchedule
    ) -> "AnalyticMixtureModel":
        weight = 1.0 / len(params)
        return cls(
            components=tuple(MixtureComponent(weight, mu, s) for mu, s in params),
            schedule=schedule,
        )

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(np.shape(self.components[0].mu)) or (1,)

    def _log_terms(self, x_t: Grid, alpha: Any, sigma: Any) -> Grid:
        return np.stack(
            [
                np.log(c.weight) + _log_marginal(c.mu, c.sigma0, x_t, alpha, sigma)
                for c in self.components
            ],
            axis=1,
        )

    def responsibilities(self, x_t: Grid, t: Any) -> Grid:
        """(n, K) posterior component probabilities given x_t."""
        alpha, sigma = _coefficients(self.schedule, t, x_t)
        return np.asarray(softmax(self._log_terms(x_t, alpha, sigma), axis=1))

    def log_density(self, x_t: Grid, t: Any) -> Grid:
        """Per-row log marginal density of x_t."""
        alpha, sigma = _coefficients(self.schedule, t, x_t)
        return np.asarray(logsumexp(self._log_terms(x_t, alpha, sigma), axis=1))

    def predict(self, x_t: Grid, t: Any, labels: LabelArray | None = None) -> Grid:
        return analytic_mixture_eps(self, x_t, t, self.schedule)


@dataclass(frozen=True)
class AnalyticConditionalModel:
    """Per-class Gaussian data with an exact unconditional branch.

    Class c draws from N(mu_c, sigma0_c^2 I). The null label (num_classes)
    predicts with the equal-weight mixture over all classes, so guidance can
    be tested against exact conditional and unconditional predictions.
    """

    classes: tuple[tuple[float | Grid, float], ...]
    schedule: NoiseSchedule
    _mixture: AnalyticMixtureModel = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "_mixture", AnalyticMixtureModel.equal_weights(self.classes, self.schedule)
        )

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self._mixture.sample_shape

    def predict(self, x_t: Grid, t: Any, labels: LabelArray | None = None) -> Grid:
        unconditional = self._mixture.predict(x_t, t)
        if labels is None:
            return unconditional
        labels = np.asarray(labels)
        if labels.shape != (x_t.shape[0],):
            raise LabelError(f"expected {x_t.shape[0]} labels, got shape {labels.shape}")
        if np.any(labels < 0) or np.any(labels > self.num_classes):
            raise LabelError(f"labels must lie in [0, {self.num_classes}]")
        alpha, sigma = _coefficients(self.schedule, t, x_t)
        out = unconditional.copy()
        for class_id, (mu, sigma0) in enumerate(self.classes):
            rows = labels == class_id
            if np.any(rows):
                a = alpha[rows] if np.ndim(alpha) else alpha
                s = sigma[rows] if np.ndim(sigma) else sigma
                out[rows] = _gaussian_eps(mu, sigma0, x_t[rows], a, s)
        return out


def analytic_gaussian_eps(
    model: AnalyticGaussianModel, x_t: Grid, t: Any, schedule: NoiseSchedule
) -> Grid:
    """E[eps | x_t] for Gaussian data; t may be fractional or per-row."""
    alpha, sigma = _coefficients(schedule, t, x_t)
    return np.asarray(_gaussian_eps(model.mu, model.sigma0, x_t, alpha, sigma), dtype=x_t.dtype)


def analytic_mixture_eps(
    model: AnalyticMixtureModel, x_t: Grid, t: Any, schedule: NoiseSchedule
) -> Grid:
    """Responsibility-weighted combination of per-component predictions."""
    alpha, sigma = _coefficients(schedule, t, x_t)
    # max-subtracted softmax over per-row log densities
    weights = softmax(model._log_terms(x_t, alpha, sigma), axis=1)
    out = np.zeros(x_t.shape, dtype=np.float64)
    for k, component in enumerate(model.components):
        branch = _gaussian_eps(component.mu, component.sigma0, x_t, alpha, sigma)
        out += broadcast_rows(weights[:, k], x_t) * branch
    return out.astype(x_t.dtype)
