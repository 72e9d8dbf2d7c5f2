"""Discrete noise schedules and the half-logSNR time reparameterization.

Tables are indexed by the 1-based diffusion step t (entry t-1). Between grid
points lambda is linearly interpolated in t; marginal alpha and sigma follow
from lambda, so t_of_lambda and lambda_at are exact mutual inverses. Time 0
denotes clean data (alpha = 1, sigma = 0).
"""
from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from .config import Spacing
from .exceptions import ScheduleError

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta, alpha, alpha-bar, sigma and lambda tables for T steps."""

    betas: FloatArray
    alphas: FloatArray
    alpha_bars: FloatArray
    sigmas: FloatArray
    lambdas: FloatArray

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    @property
    def steps(self) -> FloatArray:
        return np.arange(1, self.T + 1, dtype=np.float64)

    def index(self, t: Any) -> Any:
        """Zero-based table index for integer steps in [1, T]."""
        t_arr = np.asarray(t)
        if np.any(t_arr != np.floor(t_arr)) or np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise ScheduleError(f"step index must be an integer in [1, {self.T}], got {t!r}")
        return t_arr.astype(np.int64) - 1

    def beta(self, t: Any) -> Any:
        return self.betas[self.index(t)]

    def alpha(self, t: Any) -> Any:
        return self.alphas[self.index(t)]

    def alpha_bar(self, t: Any) -> Any:
        """Cumulative product of alphas; alpha_bar(0) is 1."""
        t_arr = np.asarray(t)
        if np.all(t_arr == 0):
            return np.ones_like(t_arr, dtype=np.float64) if t_arr.ndim else 1.0
        safe = np.where(t_arr == 0, 1, t_arr)
        return np.where(t_arr == 0, 1.0, self.alpha_bars[self.index(safe)])

    def lambda_at(self, t: Any) -> Any:
        """Half-logSNR at (fractional) time t in [1, T]; +inf at t = 0."""
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < 0) or np.any(t_arr > self.T) or np.any((t_arr > 0) & (t_arr < 1)):
            raise ScheduleError(f"time must be 0 or within [1, {self.T}], got {t!r}")
        lam = np.interp(np.maximum(t_arr, 1.0), self.steps, self.lambdas)
        return _like(t, np.where(t_arr == 0, np.inf, lam))

    def marginal_alpha(self, t: Any) -> Any:
        """sqrt(alpha_bar) at (fractional) time t."""
        lam = np.asarray(self.lambda_at(t))
        return _like(t, np.sqrt(expit(2.0 * lam)))

    def marginal_sigma(self, t: Any) -> Any:
        """sqrt(1 - alpha_bar) at (fractional) time t."""
        lam = np.asarray(self.lambda_at(t))
        return _like(t, np.sqrt(expit(-2.0 * lam)))

    def t_of_lambda(self, lam: Any) -> Any:
        """Inverse of lambda_at on [lambda_T, lambda_1].

        Raises:
            ScheduleError: If lam lies outside the schedule's lambda range.
        """
        lam_arr = np.asarray(lam, dtype=np.float64)
        low, high = self.lambdas[-1], self.lambdas[0]
        if np.any(lam_arr < low) or np.any(lam_arr > high):
            raise ScheduleError(f"lambda {lam!r} outside [{low:.6g}, {high:.6g}]")
        # lambdas decrease in t; np.interp wants increasing abscissae
        return _like(lam, np.interp(lam_arr, self.lambdas[::-1], self.steps[::-1]))


def _like(template: Any, values: FloatArray) -> Any:
    return float(values) if np.ndim(template) == 0 else values


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas from beta_start to beta_end, both inclusive.

    Raises:
        ScheduleError: Unless T >= 1 and 0 < beta_start <= beta_end < 1.
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return schedule_from_betas(betas)


def schedule_from_betas(betas: FloatArray) -> NoiseSchedule:
    """Derive all tables from a beta sequence."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size == 0 or np.any(betas <= 0) or np.any(betas >= 1):
        raise ScheduleError("betas must be a non-empty 1-D sequence in (0, 1)")
    log_alpha_bars = np.cumsum(np.log1p(-betas))
    alpha_bars = np.exp(log_alpha_bars)
    one_minus = -np.expm1(log_alpha_bars)
    return NoiseSchedule(
        betas=betas,
        alphas=1.0 - betas,
        alpha_bars=alpha_bars,
        sigmas=np.sqrt(one_minus),
        lambdas=0.5 * (log_alpha_bars - np.log(one_minus)),
    )


def select_solver_times(
    schedule: NoiseSchedule, num_steps: int, spacing: Spacing = "uniform_t"
) -> list[float]:
    """Time points T = t_N > ... > t_0 = 0 for a num_steps solver run.

    The model is evaluated at t_N ... t_1, with t_1 = 1 once num_steps > 1.
    The interval into 0 is the noise-free final denoising step. uniform_t
    rounds points evenly spaced in t between T and 1, so num_steps = T visits
    every discrete step.
    uniform_lambda spaces them evenly in lambda between lambda_T and lambda_1.

    Raises:
        ScheduleError: Unless 1 <= num_steps <= T.
    """
    if not 1 <= num_steps <= schedule.T:
        raise ScheduleError(f"num_steps must lie in [1, {schedule.T}], got {num_steps}")
    if spacing == "uniform_t":
        points = np.round(np.linspace(schedule.T, 1, num_steps))
        return [float(p) for p in points] + [0.0]
    lams = np.linspace(schedule.lambdas[-1], schedule.lambdas[0], num_steps)
    times = np.asarray(schedule.t_of_lambda(lams), dtype=np.float64)
    times[0] = schedule.T
    if num_steps > 1:
        times[-1] = 1.0
    return [float(p) for p in times] + [0.0]
