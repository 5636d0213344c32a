"""Continual sparse Gaussian-process regression with adaptive inducing-point counts."""

__version__ = "0.1.0"

from .kernels import Constant, Hyperparams, Matern32, SquaredExponential, Sum  # noqa: E402
from .online_bounds import PosteriorSummary, l_star, lower_bound, upper_bound  # noqa: E402
from .selection import CV, OIPS, VIPS, Fixed  # noqa: E402
from .stream import StreamState, evaluate, process_batch  # noqa: E402

__all__ = [
    "Constant", "CV", "Fixed", "Hyperparams", "Matern32", "OIPS", "PosteriorSummary",
    "SquaredExponential", "StreamState", "Sum", "VIPS", "evaluate", "l_star", "lower_bound",
    "process_batch", "upper_bound",
]
