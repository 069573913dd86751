"""Hierarchical MAP estimation with hyperparameter path following.

Sparse linear inverse problems via conditionally Gaussian priors with
generalized-gamma hypervariances. The package covers the MAP objective and
its scaled-Hessian machinery, accelerated alternating/Newton solvers, and a
predictor-corrector continuation over the hyperparameters (r, eta, vartheta).
"""

from ._kernels import BACKEND as kernel_backend
from .errors import (
    ConfigError,
    HyperPathError,
    InvalidHyperParameterError,
    KrylovError,
    NonFiniteObjectiveError,
    PenaltySingularError,
    RootSolveError,
    UnsupportedRegionError,
)
from .model import (
    HyperParameters,
    Problem,
    State,
    eta_from_beta,
    gradient,
    objective,
    optimal_theta,
    theta_lower_bound,
    theta_update,
)

__version__ = "1.0.0"

__all__ = [
    "kernel_backend",
    "HyperParameters",
    "Problem",
    "State",
    "eta_from_beta",
    "gradient",
    "objective",
    "optimal_theta",
    "theta_lower_bound",
    "theta_update",
    "HyperPathError",
    "InvalidHyperParameterError",
    "UnsupportedRegionError",
    "NonFiniteObjectiveError",
    "PenaltySingularError",
    "RootSolveError",
    "KrylovError",
    "ConfigError",
    "__version__",
]
