"""diffaug - diffusion-based data augmentation for spectrogram classifiers.

Trains a class-conditional denoising diffusion model on log-mel
spectrograms, samples new labelled grids with fast ODE solvers, keeps the
samples a discriminator agrees with, and measures what they add to a
downstream classifier.

Example:
    Sampling from the closed-form Gaussian model:

    >>> from diffaug import AnalyticGaussianModel, SolverConfig, linear_schedule, sample
    >>> schedule = linear_schedule(1000)
    >>> model = AnalyticGaussianModel(mu=3.0, sigma0=0.5, schedule=schedule)
    >>> grids = sample(model, schedule, SolverConfig(method="dpm2m", num_steps=20), n=4)
"""

__version__ = "0.1.0"
__author__ = "pv-udpv"
__license__ = "MIT"

from .config import (
    ClassifierConfig,
    CondNetConfig,
    FeatureConfig,
    RunConfig,
    SolverConfig,
    ThresholdConfig,
    TrainConfig,
)
from .denoisers import (
    AnalyticConditionalModel,
    AnalyticGaussianModel,
    AnalyticMixtureModel,
    CondNetLite,
    EpsilonModel,
)
from .diffusion import LabeledSample, fit, q_sample, vlb_terms
from .exceptions import (
    ConfigError,
    DiffaugError,
    FormatError,
    SelectionError,
    ShapeError,
    TrainingError,
)
from .samplers import sample
from .schedule import NoiseSchedule, linear_schedule
from .selection import ConvClassifier, topk_filter, train_discriminator

__all__ = [
    # Version info
    "__version__",
    "__author__",
    "__license__",
    # Configuration
    "ClassifierConfig",
    "CondNetConfig",
    "FeatureConfig",
    "RunConfig",
    "SolverConfig",
    "ThresholdConfig",
    "TrainConfig",
    # Models
    "AnalyticConditionalModel",
    "AnalyticGaussianModel",
    "AnalyticMixtureModel",
    "CondNetLite",
    "ConvClassifier",
    "EpsilonModel",
    # Diffusion and sampling
    "LabeledSample",
    "NoiseSchedule",
    "fit",
    "linear_schedule",
    "q_sample",
    "sample",
    "topk_filter",
    "train_discriminator",
    "vlb_terms",
    # Exceptions
    "ConfigError",
    "DiffaugError",
    "FormatError",
    "SelectionError",
    "ShapeError",
    "TrainingError",
]
