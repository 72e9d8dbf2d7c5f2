"""Forward process, training objectives and the denoiser training loop."""
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np
import pandas as pd

from .config import ReverseVariance, TrainConfig
from .denoisers import EpsilonModel, GaussianData
from .exceptions import (
    LabelError,
    NonFiniteError,
    ScheduleError,
    TrainingError,
    UnsupportedDistributionError,
)
from .numerics import AdamWState, Tape, Var, adamw_step, check_same_shape, mean64, value_and_grad
from .numerics.grid import Grid, LabelArray, broadcast_rows, check_finite
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledSample:
    """One training grid with its class and evaluation fold."""

    spectrogram: Grid
    class_id: int
    fold: int = 0

    def __post_init__(self) -> None:
        check_finite(self.spectrogram, "spectrogram")
        if self.class_id < 0:
            raise LabelError(f"class_id must be >= 0, got {self.class_id}")


class Trainable(Protocol):
    """A model whose forward pass can be recorded on a tape."""

    params: dict[str, Grid]

    @property
    def num_classes(self) -> int: ...

    def apply(
        self,
        tape: Tape,
        params: Mapping[str, Var],
        x: Var,
        t: Any,
        labels: LabelArray | None = None,
    ) -> Var: ...

    def predict(self, x_t: Grid, t: Any, labels: LabelArray | None = None) -> Grid: ...

    def with_params(self, params: Mapping[str, Grid]) -> Any: ...


def stack_samples(samples: Sequence[LabeledSample]) -> tuple[Grid, LabelArray]:
    """(n, 1, H, W) grids and (n,) labels; 2-D spectrograms gain a channel axis."""
    grids = np.stack([np.asarray(s.spectrogram, dtype=np.float32) for s in samples])
    if grids.ndim == 3:
        grids = grids[:, None]
    labels = np.array([s.class_id for s in samples], dtype=np.int64)
    return grids, labels


# -- forward process ---------------------------------------------------------


def q_sample(x0: Grid, t: Any, eps: Grid, schedule: NoiseSchedule) -> Grid:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

    t is an integer step in [1, T], or a per-row array of them for batches.

    Raises:
        ShapeError: If eps and x0 differ in shape.
        ScheduleError: If t is out of range.
    """
    check_same_shape(x0, eps, "q_sample noise")
    alpha_bar = np.asarray(schedule.alpha_bars[schedule.index(t)])
    coefficient = broadcast_rows(np.sqrt(alpha_bar), x0)
    noise_scale = broadcast_rows(np.sqrt(1.0 - alpha_bar), x0)
    return np.asarray(coefficient * x0 + noise_scale * eps, dtype=x0.dtype)


def posterior_params(
    x0: Grid, x_t: Grid, t: int, schedule: NoiseSchedule
) -> tuple[Grid, float]:
    """Mean and variance of q(x_{t-1} | x_t, x0) for 2 <= t <= T."""
    if not 2 <= t <= schedule.T:
        raise ScheduleError(f"posterior needs 2 <= t <= {schedule.T}, got {t}")
    check_same_shape(x0, x_t, "posterior inputs")
    beta = schedule.betas[t - 1]
    alpha = schedule.alphas[t - 1]
    alpha_bar = schedule.alpha_bars[t - 1]
    alpha_bar_prev = schedule.alpha_bars[t - 2]
    mean = (np.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar)) * x0 + (
        np.sqrt(alpha) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    ) * x_t
    variance = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return np.asarray(mean, dtype=x_t.dtype), float(variance)


def posterior_between(
    x0: Grid, x_t: Grid, t: float, s: float, schedule: NoiseSchedule
) -> tuple[Grid, float, float]:
    """q(x_s | x_t, x0) for any 0 <= s < t, using the respaced step ratio.

    With a' = alpha_bar_t / alpha_bar_s this is the one-step posterior of a
    chain whose only step from s to t has beta' = 1 - a'. Returns
    (mean, posterior variance, beta').
    """
    if not s < t:
        raise ScheduleError(f"posterior needs s < t, got s={s}, t={t}")
    alpha_bar_t = float(schedule.marginal_alpha(t)) ** 2
    alpha_bar_s = float(schedule.marginal_alpha(s)) ** 2
    ratio = alpha_bar_t / alpha_bar_s
    beta = 1.0 - ratio
    mean = (np.sqrt(alpha_bar_s) * beta / (1.0 - alpha_bar_t)) * x0 + (
        np.sqrt(ratio) * (1.0 - alpha_bar_s) / (1.0 - alpha_bar_t)
    ) * x_t
    variance = beta * (1.0 - alpha_bar_s) / (1.0 - alpha_bar_t)
    return np.asarray(mean, dtype=x_t.dtype), float(variance), float(beta)


def reverse_variance_at(t: int, schedule: NoiseSchedule, choice: ReverseVariance) -> float:
    """Fixed reverse-process variance: posterior beta-tilde or beta itself."""
    beta = float(schedule.beta(t))
    if choice == "beta" or t == 1:
        return beta
    alpha_bar = schedule.alpha_bars[t - 1]
    return float(beta * (1.0 - schedule.alpha_bars[t - 2]) / (1.0 - alpha_bar))


# -- objectives --------------------------------------------------------------


def simple_loss(
    model: EpsilonModel,
    x0: Grid,
    label: LabelArray | None,
    t: Any,
    eps: Grid,
    schedule: NoiseSchedule,
) -> float:
    """Unweighted mean squared noise-prediction error at step t."""
    x_t = q_sample(x0, t, eps, schedule)
    residual = np.asarray(eps, dtype=np.float64) - model.predict(x_t, t, label)
    return float(mean64(residual * residual))


def vlb_weight(t: int, schedule: NoiseSchedule, reverse_variance: float) -> float:
    """beta_t^2 / (2 alpha_t (1 - alpha_bar_t) reverse_variance)."""
    if reverse_variance <= 0:
        raise ScheduleError(f"reverse_variance must be > 0, got {reverse_variance}")
    beta = float(schedule.beta(t))
    return beta**2 / (
        2.0 * float(schedule.alpha(t)) * (1.0 - float(schedule.alpha_bar(t))) * reverse_variance
    )


def weighted_loss_term(
    model: EpsilonModel,
    x0: Grid,
    eps: Grid,
    t: int,
    schedule: NoiseSchedule,
    reverse_variance: float,
    label: LabelArray | None = None,
) -> float:
    """Variational term at step t: vlb_weight times the summed squared error."""
    weight = vlb_weight(t, schedule, reverse_variance)
    x_t = q_sample(x0, t, eps, schedule)
    residual = np.asarray(eps, dtype=np.float64) - model.predict(x_t, t, label)
    return weight * float(np.sum(residual * residual))


# -- variational bound -------------------------------------------------------


@dataclass
class VLBTerms:
    """Per-term negative variational bound in nats.

    steps[i] holds the KL term for t = i + 2.
    """

    prior: float
    steps: list[float] = field(default_factory=list)
    reconstruction: float = 0.0

    @property
    def total(self) -> float:
        return self.prior + float(np.sum(self.steps)) + self.reconstruction


def _gaussian_kl(mean_q: Grid, var_q: float, mean_p: Grid, var_p: float) -> Grid:
    """Per-row KL(N(mean_q, var_q I) || N(mean_p, var_p I)) summed over elements."""
    diff = mean_q - mean_p
    axes = tuple(range(1, diff.ndim))
    numel = int(np.prod(diff.shape[1:], dtype=np.int64))
    quadratic = np.sum(diff * diff, axis=axes) / var_p
    return 0.5 * (numel * (np.log(var_p / var_q) + var_q / var_p - 1.0) + quadratic)


def vlb_terms(
    analytic_model: EpsilonModel,
    x0_distribution: Any,
    schedule: NoiseSchedule,
    num_mc: int,
    reverse_variance: ReverseVariance = "posterior",
    rng: np.random.Generator | None = None,
) -> VLBTerms:
    """Monte-Carlo estimate of every term of the negative variational bound.

    The prior term is KL(q(x_T | x0) || N(0, I)); step terms are the closed-form
    Gaussian KL between q(x_{t-1} | x_t, x0) and the model's fixed-variance
    reverse step; the reconstruction term is -log N(x0; mu_theta(x_1), beta_1 I).

    Raises:
        UnsupportedDistributionError: If x0_distribution is not GaussianData.
    """
    if not isinstance(x0_distribution, GaussianData):
        raise UnsupportedDistributionError(
            f"closed-form KL needs Gaussian data, got {type(x0_distribution).__name__}"
        )
    rng = rng or np.random.default_rng(0)
    shape = x0_distribution.shape or (1,)
    numel = int(np.prod(shape, dtype=np.int64))

    def draw(t: int) -> tuple[Grid, Grid]:
        x0 = x0_distribution.sample(rng, num_mc, shape).astype(np.float64)
        eps = rng.standard_normal(x0.shape)
        return x0, q_sample(x0, t, eps, schedule)

    def model_mean(x_t: Grid, t: int) -> Grid:
        eps_hat = analytic_model.predict(x_t, t, None)
        beta = float(schedule.beta(t))
        noise_scale = beta / np.sqrt(1.0 - float(schedule.alpha_bar(t)))
        return (x_t - noise_scale * eps_hat) / np.sqrt(float(schedule.alpha(t)))

    x0, _ = draw(schedule.T)
    alpha_bar_T = float(schedule.alpha_bar(schedule.T))
    prior = _gaussian_kl(np.sqrt(alpha_bar_T) * x0, 1.0 - alpha_bar_T, np.zeros_like(x0), 1.0)
    terms = VLBTerms(prior=float(np.mean(prior)))

    for t in range(2, schedule.T + 1):
        x0, x_t = draw(t)
        mean_q, var_q = posterior_params(x0, x_t, t, schedule)
        var_p = reverse_variance_at(t, schedule, reverse_variance)
        terms.steps.append(float(np.mean(_gaussian_kl(mean_q, var_q, model_mean(x_t, t), var_p))))

    x0, x_1 = draw(1)
    var_1 = float(schedule.beta(1))
    residual = x0 - model_mean(x_1, 1)
    axes = tuple(range(1, residual.ndim))
    nll = 0.5 * numel * np.log(2.0 * np.pi * var_1) + np.sum(residual**2, axis=axes) / (2.0 * var_1)
    terms.reconstruction = float(np.mean(nll))
    logger.debug(
        "VLB prior=%.3g steps=%.3g reconstruction=%.3g",
        terms.prior,
        float(np.sum(terms.steps)),
        terms.reconstruction,
    )
    return terms


# -- training ----------------------------------------------------------------


@dataclass
class FitResult:
    """Trained model and its per-epoch mean simple loss."""

    model: Any
    losses: list[float]


def fit(
    model: Trainable,
    dataset: Sequence[LabeledSample],
    config: TrainConfig,
    schedule: NoiseSchedule,
    on_epoch: Callable[[int, float], None] | None = None,
) -> FitResult:
    """Train an epsilon model on the simple loss with label dropout.

    Each epoch shuffles the data, draws t uniformly from 1..T and standard
    normal noise per example, and replaces each label by the null label
    (num_classes) with probability label_dropout_probability. All draws come
    from one generator seeded by config.seed, so runs are reproducible.

    Raises:
        TrainingError: If dataset is empty, a class id is out of range, or the
            loss becomes non-finite.
    """
    if not dataset:
        raise TrainingError("cannot train on an empty dataset")
    grids, labels = stack_samples(dataset)
    if np.any(labels >= model.num_classes):
        raise TrainingError(f"class ids must be < {model.num_classes}")

    rng = np.random.default_rng(config.seed)
    params = dict(model.params)
    state = AdamWState.create(params, config.optimizer)
    null_label = model.num_classes
    n = len(dataset)
    losses: list[float] = []
    logger.info(
        "Training denoiser on %d samples for %d epochs (batch %d)",
        n,
        config.epochs,
        config.batch_size,
    )

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            x0 = grids[rows]
            t = rng.integers(1, schedule.T + 1, size=len(rows))
            eps = rng.standard_normal(x0.shape).astype(np.float32)
            dropped = rng.random(len(rows)) < config.label_dropout_probability
            batch_labels = np.where(dropped, null_label, labels[rows])
            x_t = q_sample(x0, t, eps, schedule)

            def shard_loss(tape: Tape, leaves: Mapping[str, Var], part: slice) -> Var:
                x = tape.constant(x_t[part])
                pred = model.apply(tape, leaves, x, t[part], batch_labels[part])
                return tape.mse(pred, tape.constant(eps[part]))

            try:
                loss, grads = value_and_grad(shard_loss, params, len(rows), config.workers)
            except NonFiniteError as e:
                raise TrainingError(f"epoch {epoch}: {e}") from e
            params = adamw_step(params, grads, state)
            epoch_loss += loss * len(rows)

        mean_loss = epoch_loss / n
        losses.append(mean_loss)
        logger.info("epoch %d mean_loss %.6f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)

    return FitResult(model=model.with_params(params), losses=losses)


def write_loss_trace(path: Path, losses: Sequence[float]) -> None:
    """CSV with columns epoch, mean_loss."""
    frame = pd.DataFrame({"epoch": np.arange(1, len(losses) + 1), "mean_loss": list(losses)})
    frame.to_csv(path, index=False)
