"""Penalized-likelihood selection of the number of hidden units of a
one-hidden-layer perceptron regression model with Gaussian noise."""

__version__ = "0.1.0"

from .estimators import GaussianMLPRegressor, MLPArchitectureSelector  # noqa: E402
from .likelihood import Dataset, NoiseModel  # noqa: E402
from .network import MlpParams, HiddenUnit, Logistic, Tanh, forward, get_transfer  # noqa: E402
from .optim import FitConfig, ParamSpace, fit_mle  # noqa: E402
from .selection import Penalty, select_architecture  # noqa: E402

__all__ = [
    "GaussianMLPRegressor",
    "MLPArchitectureSelector",
    "Dataset",
    "NoiseModel",
    "MlpParams",
    "HiddenUnit",
    "Logistic",
    "Tanh",
    "forward",
    "get_transfer",
    "FitConfig",
    "ParamSpace",
    "fit_mle",
    "Penalty",
    "select_architecture",
]
