"""Exception types shared across the package."""


class HyperPathError(Exception):
    """Base class for package-specific errors."""


class InvalidHyperParameterError(HyperPathError, ValueError):
    """Hyperparameters outside the valid region."""


class UnsupportedRegionError(HyperPathError, ValueError):
    """Operation not implemented for this hyperparameter branch."""


class NonFiniteObjectiveError(HyperPathError, ArithmeticError):
    """Objective overflowed, typically theta near zero with large x."""


class PenaltySingularError(HyperPathError, ArithmeticError):
    """Penalty block numerically singular; its inverse cannot be applied."""


class RootSolveError(HyperPathError, ArithmeticError):
    """Componentwise variance update did not converge."""


class KrylovError(HyperPathError, ArithmeticError):
    """Krylov iteration broke down twice in a row."""


class ConfigError(HyperPathError, ValueError):
    """Configuration file missing, malformed, or inconsistent."""
