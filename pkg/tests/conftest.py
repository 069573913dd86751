import numpy as np
import pytest

from hyperpath.model import HyperParameters
from hyperpath.problems import build_deconvolution


@pytest.fixture(scope="session")
def decon():
    """The 96-point deconvolution instance, seed 0. Built once per session."""
    return build_deconvolution(seed=0)


@pytest.fixture(scope="session")
def convex_hyper():
    """A hyperparameter point in the convex regime (r >= 1)."""
    return HyperParameters(1.5, 1.5, 1e-5)


@pytest.fixture(scope="session")
def sparse_hyper():
    """The sparsity-promoting endpoint; nonconvex, multiple local minima."""
    return HyperParameters(0.5, 1e-5, 1e-6)


def random_problem(rng, m, n, noise=0.01):
    """Small dense instance with gaussian operator and data; for unit tests."""
    from hyperpath.model import Problem

    a = rng.standard_normal((m, n))
    x = rng.standard_normal(n)
    b = a @ x + noise * rng.standard_normal(m)
    return Problem(a, b, truth=x, noise_sigma=noise)
