"""Hierarchical-model layer.

Defines the problem and state containers, the objective

    G(x, theta) = 1/2 ||b - A x||^2 + 1/2 sum x_j^2 / theta_j
                  - eta sum log(theta_j / vartheta_j)
                  + sum (theta_j / vartheta_j)^r,

its gradient in the internal coordinates (x, phi = log theta), and the
componentwise optimal-variance update. Positivity of theta is automatic in
the log coordinates; every public interface accepts and returns theta.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import (
    InvalidHyperParameterError,
    NonFiniteObjectiveError,
    UnsupportedRegionError,
)

__all__ = [
    "HyperParameters",
    "State",
    "Problem",
    "eta_from_beta",
    "objective",
    "gradient",
    "theta_update",
    "optimal_theta",
    "theta_lower_bound",
]


def eta_from_beta(r, beta):
    """Shape parameter eta for a given (r, beta) pair: eta = r*beta - 3/2."""
    return r * beta - 1.5


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HyperParameters:
    """Hyperprior parameters (r, eta, vartheta).

    vartheta may be a scalar (broadcast over components) or a vector of
    per-component scales. Valid region: r > 0 with eta > 0, or r < 0 with
    eta < -3/2; both give a derived slope beta = (eta + 3/2)/r > 0.
    """

    r: float
    eta: float
    vartheta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "vartheta", _readonly(self.vartheta))
        if self.vartheta.ndim > 1:
            raise InvalidHyperParameterError("vartheta must be scalar or 1-D")
        if not (np.all(np.isfinite(self.vartheta)) and np.all(self.vartheta > 0)):
            raise InvalidHyperParameterError("vartheta entries must be positive")
        if not (np.isfinite(self.r) and np.isfinite(self.eta)):
            raise InvalidHyperParameterError("r and eta must be finite")
        ok = (self.r > 0 and self.eta > 0) or (self.r < 0 and self.eta < -1.5)
        if not ok:
            raise InvalidHyperParameterError(
                f"(r, eta) = ({self.r}, {self.eta}) outside the valid region: "
                "need r > 0, eta > 0 or r < 0, eta < -3/2"
            )

    @property
    def beta(self):
        return (self.eta + 1.5) / self.r

    @classmethod
    def from_beta(cls, r, beta, vartheta):
        return cls(r, eta_from_beta(r, beta), vartheta)


@dataclass(frozen=True, eq=False)
class State:
    """A point (x, theta); theta entries must be strictly positive."""

    x: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(self.x))
        object.__setattr__(self, "theta", _readonly(self.theta))
        if self.x.shape != self.theta.shape or self.x.ndim != 1:
            raise ValueError("x and theta must be 1-D arrays of equal length")
        if not np.all(self.theta > 0):
            raise ValueError("theta entries must be strictly positive")

    @classmethod
    def from_phi(cls, x, phi):
        return cls(x, np.exp(phi))

    @cached_property
    def phi(self):
        """Log-variances; the canonical internal coordinate."""
        return _readonly(np.log(self.theta))

    @property
    def n(self):
        return self.x.shape[0]


@dataclass(frozen=True, eq=False)
class Problem:
    """A linear inverse problem b = A x + noise.

    truth and noise_sigma are carried for benchmarking when known; config is
    an optional dict echoed into serialized sidecars.
    """

    operator: np.ndarray
    data: np.ndarray
    truth: np.ndarray | None = None
    noise_sigma: float | None = None
    config: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "operator", _readonly(self.operator))
        object.__setattr__(self, "data", _readonly(self.data))
        if self.operator.ndim != 2:
            raise ValueError("operator must be a 2-D array")
        if self.data.shape != (self.operator.shape[0],):
            raise ValueError("data length must match operator rows")
        if self.truth is not None:
            object.__setattr__(self, "truth", _readonly(self.truth))
            if self.truth.shape != (self.operator.shape[1],):
                raise ValueError("truth length must match operator columns")
        if self.noise_sigma is not None:
            object.__setattr__(self, "noise_sigma", float(self.noise_sigma))

    @property
    def shape(self):
        return self.operator.shape

    @property
    def n(self):
        return self.operator.shape[1]

    @cached_property
    def entrywise_nonnegative(self):
        """True when the operator has no negative entries (exact column-sum
        shortcuts apply)."""
        return bool(np.all(self.operator >= 0))


def _ratio_pow(theta, hyper):
    return (theta / hyper.vartheta) ** hyper.r


def objective(problem, state, hyper, *, check=True):
    """Value of G at (x, theta).

    With check=True a non-finite value (overflow from theta near zero with
    large x, or from huge log-variances) raises NonFiniteObjectiveError;
    check=False returns the non-finite float, which line searches treat as
    a rejected trial point.
    """
    resid = problem.data - problem.operator @ state.x
    ratio = state.theta / hyper.vartheta
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        val = (
            0.5 * (resid @ resid)
            + 0.5 * np.sum(state.x * state.x / state.theta)
            - hyper.eta * np.sum(np.log(ratio))
            + np.sum(ratio**hyper.r)
        )
    val = float(val)
    if check and not np.isfinite(val):
        raise NonFiniteObjectiveError("objective is not finite at this state")
    return val


def gradient(problem, state, hyper):
    """Gradient of G in (x, phi) coordinates, concatenated to length 2n.

    The x block is A^T(Ax - b) + x/theta; the phi block is
    -x^2/(2 theta) - eta + r (theta/vartheta)^r, componentwise.
    """
    a = problem.operator
    resid = a @ state.x - problem.data
    gx = a.T @ resid + state.x / state.theta
    gphi = (
        -0.5 * state.x * state.x / state.theta
        - hyper.eta
        + hyper.r * _ratio_pow(state.theta, hyper)
    )
    return np.concatenate([gx, gphi])


def theta_update(u, hyper):
    """Optimal nondimensional variance xi for nondimensional signal u.

    Solves r xi^(r+1) - eta xi - u^2/2 = 0 for its unique positive root.
    The root is even in u, strictly increasing in |u|, and bounded below by
    (eta/r)^(1/r), with equality exactly at u = 0. Scalars map to a float,
    arrays map elementwise.
    """
    if hyper.r < 0:
        raise UnsupportedRegionError("variance update requires r > 0")
    arr = np.asarray(u, dtype=np.float64)
    flat = np.ascontiguousarray(arr.reshape(-1))
    xi = _kernels.theta_root_batch(flat * flat, hyper.r, hyper.eta)
    if arr.ndim == 0:
        return float(xi[0])
    return xi.reshape(arr.shape)


def optimal_theta(x, hyper):
    """Componentwise minimizer of G over theta at fixed x."""
    root_scale = np.sqrt(hyper.vartheta)
    u = np.asarray(x, dtype=np.float64) / root_scale
    return hyper.vartheta * theta_update(u, hyper)


def theta_lower_bound(hyper, n):
    """Smallest attainable optimal variance, vartheta*(eta/r)^(1/r), as a
    length-n vector."""
    if hyper.r < 0:
        raise UnsupportedRegionError("lower bound requires r > 0")
    bound = hyper.vartheta * (hyper.eta / hyper.r) ** (1.0 / hyper.r)
    return np.broadcast_to(np.asarray(bound, dtype=np.float64), (n,)).copy()
