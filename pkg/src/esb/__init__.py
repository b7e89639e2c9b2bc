"""Empirical-prior Bayesian sparse regression with unknown error variance."""

__version__ = "0.1.0"

from .core import Dataset, HyperParams, ModelFit, fit_support, log_model_posterior_unnorm  # noqa: E402
from .errors import EsbError  # noqa: E402
from .search import (  # noqa: E402
    ChainConfig,
    ModelPosteriorTable,
    PosteriorSamples,
    enumerate_posterior,
    inclusion_probabilities,
    run_chain,
)

__all__ = [
    "__version__",
    "Dataset",
    "HyperParams",
    "ModelFit",
    "fit_support",
    "log_model_posterior_unnorm",
    "EsbError",
    "ChainConfig",
    "ModelPosteriorTable",
    "PosteriorSamples",
    "enumerate_posterior",
    "inclusion_probabilities",
    "run_chain",
]
