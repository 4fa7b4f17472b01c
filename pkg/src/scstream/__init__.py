"""Streaming Dirichlet-process mixture clustering with damped-window statistics."""
from .engine import Batch, BatchResult, EngineConfig, ScStream, predict_labels, run_stream, update_with_batch
from .errors import (
    ConfigurationError,
    FormatError,
    InputError,
    NumericalError,
    ScStreamError,
    StateError,
)
from .family import ConjugateFamily, SufficientStats, stats_add, stats_from_points, stats_scale
from .gaussian import GaussianNIW, NiwPosterior, NiwPrior
from .multinomial import DirichletPosterior, DirichletPrior, MultinomialDirichlet

__version__ = "0.1.0"

__all__ = [
    "Batch", "BatchResult", "EngineConfig", "ScStream", "predict_labels", "run_stream",
    "update_with_batch", "ConfigurationError", "FormatError", "InputError", "NumericalError",
    "ScStreamError", "StateError", "ConjugateFamily", "SufficientStats", "stats_add",
    "stats_from_points", "stats_scale", "GaussianNIW", "NiwPosterior", "NiwPrior",
    "DirichletPosterior", "DirichletPrior", "MultinomialDirichlet",
]
