"""Reverse-time samplers: ancestral chains and exponential-integrator ODE solvers.

All solvers march over time points from select_solver_times. With lambda the
half-logSNR, h = lambda(t_next) - lambda(t_prev) > 0 and D the (optionally
thresholded) data prediction, the first-order updates are

    noise form: x_next = alpha_next / alpha_prev * x - sigma_next * (e^h - 1) * eps
    data form:  x_next = sigma_next / sigma_prev * x - alpha_next * (e^-h - 1) * D

Second-order variants add a first-derivative correction in lambda: 2S from a
midpoint evaluation, 2M from the previous step's data prediction. The final
interval into t = 0 is noise-free and returns the data prediction.
"""
import logging
from collections import deque
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .config import Prediction, ReverseVariance, SolverConfig, ThresholdConfig
from .denoisers import EpsilonModel
from .diffusion import posterior_between
from .exceptions import ConfigError, ScheduleError
from .numerics.grid import Grid, LabelArray, broadcast_rows, check_finite
from .schedule import NoiseSchedule, select_solver_times

logger = logging.getLogger(__name__)


@dataclass
class SamplerState:
    """A batch of trajectories at a shared time.

    history keeps (lambda, data prediction) pairs of earlier evaluations for
    the multistep solver; rngs holds one generator per trajectory row.
    """

    x: Grid
    t: float
    history: deque[tuple[float, Grid]] = field(default_factory=lambda: deque(maxlen=2))
    rngs: list[np.random.Generator] = field(default_factory=list)


def guided_eps(
    model: EpsilonModel, x: Grid, t: Any, labels: LabelArray | None, w: float
) -> Grid:
    """(w + 1) * eps(x, t, labels) - w * eps(x, t).

    w = 0 skips the unconditional evaluation; labels None is unconditional.
    """
    if labels is None:
        return model.predict(x, t, None)
    conditional = model.predict(x, t, labels)
    if w == 0:
        return conditional
    unconditional = model.predict(x, t, None)
    return (w + 1.0) * conditional - w * unconditional


def apply_threshold(x0: Grid, thresholding: ThresholdConfig) -> Grid:
    """Static clipping or per-sample dynamic percentile rescaling."""
    if thresholding.mode == "static":
        return np.clip(x0, -thresholding.bound, thresholding.bound)
    if thresholding.mode == "dynamic":
        axes = tuple(range(1, x0.ndim))
        flat = np.abs(x0).reshape(x0.shape[0], -1)
        s = np.quantile(flat, thresholding.percentile, axis=1)
        s = np.maximum(s, 1.0).reshape((-1,) + (1,) * len(axes))
        return (np.clip(x0, -s, s) / s).astype(x0.dtype)
    return x0


def eps_to_x0(
    x_t: Grid,
    eps: Grid,
    t: Any,
    schedule: NoiseSchedule,
    thresholding: ThresholdConfig | None = None,
) -> Grid:
    """Invert the forward marginal for x0, then threshold.

    Raises:
        ScheduleError: If alpha_bar_t underflows to zero.
    """
    alpha = np.asarray(schedule.marginal_alpha(t))
    if np.any(alpha <= 0):
        raise ScheduleError(f"alpha_bar is zero at t={t!r}; cannot recover x0")
    alpha_rows = broadcast_rows(alpha, x_t)
    sigma_rows = broadcast_rows(schedule.marginal_sigma(t), x_t)
    x0 = np.asarray((x_t - sigma_rows * eps) / alpha_rows, dtype=x_t.dtype)
    return apply_threshold(x0, thresholding) if thresholding is not None else x0


@dataclass(frozen=True)
class Denoiser:
    """Guided model bound to a schedule, labels and thresholding."""

    model: EpsilonModel
    schedule: NoiseSchedule
    labels: LabelArray | None = None
    guidance_scale: float = 0.0
    thresholding: ThresholdConfig = ThresholdConfig()

    def eps(self, x: Grid, t: float) -> Grid:
        return guided_eps(self.model, x, t, self.labels, self.guidance_scale)

    def data(self, x: Grid, t: float) -> Grid:
        return eps_to_x0(x, self.eps(x, t), t, self.schedule, self.thresholding)

    def rows(self, index: slice) -> "Denoiser":
        labels = None if self.labels is None else self.labels[index]
        return replace(self, labels=labels)


def _advance(state: SamplerState, x: Grid, t: float) -> SamplerState:
    check_finite(x, f"sample at t={t}")
    return SamplerState(x=x, t=t, history=state.history, rngs=state.rngs)


def _check_interval(schedule: NoiseSchedule, t_prev: float, t_next: float) -> None:
    if not 0 <= t_next < t_prev <= schedule.T:
        raise ScheduleError(f"need 0 <= t_next < t_prev <= {schedule.T}, got {t_prev} -> {t_next}")


def _final(denoiser: Denoiser, state: SamplerState, prediction: Prediction) -> SamplerState:
    x = state.x
    if prediction == "data":
        x0 = denoiser.data(x, state.t)
    else:
        x0 = eps_to_x0(x, denoiser.eps(x, state.t), state.t, denoiser.schedule)
    return _advance(state, x0, 0.0)


def first_order_step(
    denoiser: Denoiser,
    state: SamplerState,
    t_prev: float,
    t_next: float,
    prediction: Prediction = "data",
) -> SamplerState:
    """One exponential-integrator step, exact for a prediction constant in lambda."""
    _check_interval(denoiser.schedule, t_prev, t_next)
    state = replace(state, t=t_prev)
    if t_next == 0:
        return _final(denoiser, state, prediction)
    s = denoiser.schedule
    h = s.lambda_at(t_next) - s.lambda_at(t_prev)
    alpha_p, sigma_p = s.marginal_alpha(t_prev), s.marginal_sigma(t_prev)
    alpha_n, sigma_n = s.marginal_alpha(t_next), s.marginal_sigma(t_next)
    x = state.x
    if prediction == "noise":
        x_next = alpha_n / alpha_p * x - sigma_n * np.expm1(h) * denoiser.eps(x, t_prev)
    else:
        x_next = sigma_n / sigma_p * x - alpha_n * np.expm1(-h) * denoiser.data(x, t_prev)
    return _advance(state, np.asarray(x_next, dtype=x.dtype), t_next)


def dpm2s_step(
    denoiser: Denoiser,
    state: SamplerState,
    t_prev: float,
    t_next: float,
    prediction: Prediction = "data",
) -> SamplerState:
    """Single-step second-order update with a midpoint evaluation in lambda.

    The midpoint prediction gives a slope estimate that is integrated with its
    exact exponential weight, so predictions affine in lambda are solved
    exactly.
    """
    _check_interval(denoiser.schedule, t_prev, t_next)
    state = replace(state, t=t_prev)
    if t_next == 0:
        return _final(denoiser, state, prediction)
    s = denoiser.schedule
    lam_prev = s.lambda_at(t_prev)
    h = s.lambda_at(t_next) - lam_prev
    t_mid = s.t_of_lambda(lam_prev + 0.5 * h)
    alpha_p, sigma_p = s.marginal_alpha(t_prev), s.marginal_sigma(t_prev)
    alpha_m, sigma_m = s.marginal_alpha(t_mid), s.marginal_sigma(t_mid)
    alpha_n, sigma_n = s.marginal_alpha(t_next), s.marginal_sigma(t_next)
    x = state.x
    if prediction == "noise":
        e_prev = denoiser.eps(x, t_prev)
        u = alpha_m / alpha_p * x - sigma_m * np.expm1(0.5 * h) * e_prev
        slope = (denoiser.eps(u, t_mid) - e_prev) / (0.5 * h)
        x_next = (
            alpha_n / alpha_p * x
            - sigma_n * np.expm1(h) * e_prev
            - sigma_n * (np.expm1(h) - h) * slope
        )
    else:
        d_prev = denoiser.data(x, t_prev)
        u = sigma_m / sigma_p * x - alpha_m * np.expm1(-0.5 * h) * d_prev
        slope = (denoiser.data(u, t_mid) - d_prev) / (0.5 * h)
        x_next = (
            sigma_n / sigma_p * x
            - alpha_n * np.expm1(-h) * d_prev
            + alpha_n * (np.expm1(-h) + h) * slope
        )
    return _advance(state, np.asarray(x_next, dtype=x.dtype), t_next)


def dpm2m_step(
    denoiser: Denoiser, state: SamplerState, t_prev: float, t_next: float
) -> SamplerState:
    """Multistep second-order data-prediction update.

    With r = h_previous / h the current prediction D_0 and the previous one
    D_1 combine into D = (1 + 1/(2r)) D_0 - 1/(2r) D_1. Without history this
    is the first-order data update.
    """
    _check_interval(denoiser.schedule, t_prev, t_next)
    s = denoiser.schedule
    x = state.x
    d_prev = denoiser.data(x, t_prev)
    lam_prev = s.lambda_at(t_prev)
    history = state.history
    if t_next == 0:
        history.append((lam_prev, d_prev))
        return _advance(replace(state, t=t_prev), d_prev, 0.0)

    h = s.lambda_at(t_next) - lam_prev
    d = d_prev
    if history:
        lam_before, d_before = history[-1]
        r = (lam_prev - lam_before) / h
        d = (1.0 + 0.5 / r) * d_prev - (0.5 / r) * d_before
    history.append((lam_prev, d_prev))
    x_next = (
        s.marginal_sigma(t_next) / s.marginal_sigma(t_prev) * x
        - s.marginal_alpha(t_next) * np.expm1(-h) * d
    )
    return _advance(replace(state, t=t_prev), np.asarray(x_next, dtype=x.dtype), t_next)


def ancestral_step(
    denoiser: Denoiser,
    state: SamplerState,
    t_prev: float,
    t_next: float,
    reverse_variance: ReverseVariance = "posterior",
) -> SamplerState:
    """Stochastic reverse step from t_prev to t_next.

    The mean is the posterior mean given the predicted x0, which for adjacent
    integer steps equals (x - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t).
    Skipped steps use the respaced posterior. The step into t = 0 adds no noise.
    """
    _check_interval(denoiser.schedule, t_prev, t_next)
    x = state.x
    x0 = eps_to_x0(x, denoiser.eps(x, t_prev), t_prev, denoiser.schedule, denoiser.thresholding)
    mean, posterior_var, beta = posterior_between(x0, x, t_prev, t_next, denoiser.schedule)
    if t_next == 0:
        return _advance(replace(state, t=t_prev), mean, 0.0)
    variance = posterior_var if reverse_variance == "posterior" else beta
    if len(state.rngs) != x.shape[0]:
        raise ConfigError(
            f"ancestral sampling needs {x.shape[0]} generators, got {len(state.rngs)}"
        )
    noise = np.stack([rng.standard_normal(x.shape[1:]) for rng in state.rngs])
    x_next = mean + np.sqrt(variance) * noise
    return _advance(replace(state, t=t_prev), np.asarray(x_next, dtype=x.dtype), t_next)


def solve(
    denoiser: Denoiser,
    state: SamplerState,
    times: Sequence[float],
    method: str,
    prediction: Prediction = "data",
    reverse_variance: ReverseVariance = "posterior",
) -> SamplerState:
    """Run one solver over consecutive pairs of decreasing time points."""
    for t_prev, t_next in zip(times[:-1], times[1:], strict=True):
        if method == "ancestral":
            state = ancestral_step(denoiser, state, t_prev, t_next, reverse_variance)
        elif method == "first_order":
            state = first_order_step(denoiser, state, t_prev, t_next, prediction)
        elif method == "dpm2s":
            state = dpm2s_step(denoiser, state, t_prev, t_next, prediction)
        elif method == "dpm2m":
            state = dpm2m_step(denoiser, state, t_prev, t_next)
        else:
            raise ConfigError(f"unknown solver method {method!r}")
    return state


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for trajectory index under seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample(
    model: EpsilonModel,
    schedule: NoiseSchedule,
    config: SolverConfig,
    n: int,
    label: int | LabelArray | None = None,
    shape: tuple[int, ...] | None = None,
    first_index: int = 0,
) -> list[Grid]:
    """Generate n samples, one independent trajectory each.

    Trajectory i starts from standard normal noise drawn from
    trajectory_rng(config.seed, first_index + i), which also supplies its
    ancestral noise, so outputs depend only on (seed, index). Trajectories
    run in chunks of config.chunk_size, spread over config.workers threads,
    and are returned in index order.

    Args:
        label: One class id for every sample, a per-sample array, or None
            for unconditional generation.
        shape: Per-sample shape; defaults to model.sample_shape.
        first_index: Index of the first trajectory, for resuming a budget.

    Raises:
        ConfigError: If n < 1 or no sample shape is known.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    shape = shape or getattr(model, "sample_shape", None)
    if shape is None:
        raise ConfigError("sample shape unknown; pass shape=")
    labels: LabelArray | None = None
    if label is not None:
        labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (n,)).copy()

    times = select_solver_times(schedule, config.num_steps, config.spacing)
    denoiser = Denoiser(
        model=model,
        schedule=schedule,
        labels=labels,
        guidance_scale=config.guidance_scale,
        thresholding=config.thresholding,
    )
    rngs = [trajectory_rng(config.seed, first_index + i) for i in range(n)]
    x_T = np.stack([rng.standard_normal(shape) for rng in rngs]).astype(np.float32)

    def run(chunk: slice) -> Grid:
        state = SamplerState(x=x_T[chunk], t=float(schedule.T), rngs=rngs[chunk])
        final = solve(
            denoiser.rows(chunk),
            state,
            times,
            config.method,
            config.prediction,
            config.reverse_variance,
        )
        return final.x

    chunks = [slice(i, min(i + config.chunk_size, n)) for i in range(0, n, config.chunk_size)]
    logger.info(
        "Sampling %d trajectories with %s, %d steps, w=%g",
        n,
        config.method,
        config.num_steps,
        config.guidance_scale,
    )
    if config.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(chunk) for chunk in chunks]
    return [row for part in parts for row in part]
