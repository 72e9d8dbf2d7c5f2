"""Epsilon-prediction models."""

from typing import Any, Protocol, runtime_checkable

from ..numerics.grid import Grid, LabelArray
from .analytic import (
    AnalyticConditionalModel,
    AnalyticGaussianModel,
    AnalyticMixtureModel,
    GaussianData,
    MixtureComponent,
    analytic_gaussian_eps,
    analytic_mixture_eps,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .condnet import CondNetLite, condnet_predict


@runtime_checkable
class EpsilonModel(Protocol):
    """Batched noise predictor.

    x_t has a leading batch axis; t is a scalar or per-row array (fractional
    times allowed); labels is a per-row integer array where num_classes is
    the null label, or None for the unconditional branch.
    """

    def predict(self, x_t: Grid, t: Any, labels: LabelArray | None = None) -> Grid: ...


__all__ = [
    "AnalyticConditionalModel",
    "AnalyticGaussianModel",
    "AnalyticMixtureModel",
    "CondNetLite",
    "EpsilonModel",
    "GaussianData",
    "MixtureComponent",
    "analytic_gaussian_eps",
    "analytic_mixture_eps",
    "condnet_predict",
    "load_checkpoint",
    "save_checkpoint",
]
