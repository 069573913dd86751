"""Vectorized numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or explicitly disabled.
Semantics must match ``_core`` exactly; both are exercised by the test suite.
"""

import numpy as np

from ..errors import RootSolveError

BACKEND = "numpy"

_REL_TOL = 1e-14
_MAX_NEWTON = 100

# Coefficients of the large-argument expansion: a[0] = 1,
# a[m] = a[m-1] * (4 - (2m-1)^2) / (8m). Fixed truncation keeps the
# remainder below ~5e-11 for arguments >= 11.
_N_ASY = 24
_ASY = np.empty(_N_ASY)
_ASY[0] = 1.0
for _m in range(1, _N_ASY):
    _ASY[_m] = _ASY[_m - 1] * (4.0 - (2.0 * _m - 1.0) ** 2) / (8.0 * _m)

_SERIES_CUT = 11.0
_THREE_QUARTER_PI = 2.356194490192344928846982537459627163


def theta_root_batch(u_sq, r, eta):
    """Positive roots of r*xi^(r+1) - eta*xi - u_sq/2 = 0, componentwise.

    Parameters
    ----------
    u_sq : ndarray
        Squares of the nondimensional signal entries, shape (n,).
    r, eta : float
        Shape hyperparameters, r > 0 and eta > 0.

    Returns
    -------
    ndarray
        The unique root xi >= (eta/r)^(1/r) for each component.
    """
    u_sq = np.asarray(u_sq, dtype=np.float64)
    xi_min = (eta / r) ** (1.0 / r)
    if r == 1.0:
        return 0.5 * (eta + np.sqrt(eta * eta + 2.0 * u_sq))

    xi = np.full_like(u_sq, xi_min)
    active = u_sq > 0.0
    if not np.any(active):
        return xi

    us = u_sq[active]
    offset = (2.0 * (0.5 * us + eta) / r) ** (1.0 / (r + 1.0))
    hi = xi_min + offset
    # The offset above brackets the root in all tested regimes; double it
    # if the residual check disagrees (cheap insurance against fp edge cases).
    for _ in range(64):
        bad = r * hi ** (r + 1.0) - eta * hi - 0.5 * us < 0.0
        if not np.any(bad):
            break
        offset = np.where(bad, 2.0 * offset, offset)
        hi = xi_min + offset
    else:
        raise RootSolveError("could not bracket the variance update root")

    # Newton from the upper end: the residual is convex and increasing on
    # [xi_min, inf), so iterates decrease monotonically toward the root.
    x = hi
    live = np.ones(x.shape, dtype=bool)
    for _ in range(_MAX_NEWTON):
        xl = x[live]
        pw = xl ** r
        rho = r * pw * xl - eta * xl - 0.5 * us[live]
        drho = r * (r + 1.0) * pw - eta
        step = rho / drho
        xl = np.maximum(xl - step, xi_min)
        x[live] = xl
        done = np.abs(step) <= _REL_TOL * xl
        live[live] = ~done
        if not np.any(live):
            break
    else:
        raise RootSolveError("variance update did not converge in 100 iterations")

    xi[active] = x
    return xi


def _j1_series(x):
    # Ascending series in (x/2)^2; converges for all x, used below the cut
    # where cancellation stays harmless.
    half = 0.5 * x
    q = half * half
    term = half.copy()
    total = half.copy()
    for k in range(1, 60):
        term *= -q / (k * (k + 1.0))
        total += term
        if np.all(np.abs(term) <= 1e-18 * (1.0 + np.abs(total))):
            break
    return total


def _j1_asymptotic(x):
    z = 1.0 / x
    z2 = z * z
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    sign = 1.0
    for k in range(_N_ASY // 2):
        zp = z2**k
        p += sign * _ASY[2 * k] * zp
        q += sign * _ASY[2 * k + 1] * zp * z
        sign = -sign
    chi = x - _THREE_QUARTER_PI
    return np.sqrt(2.0 / (np.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j1_batch(t):
    """Bessel function of the first kind, order one.

    Ascending power series below |t| = 11, large-argument trigonometric
    expansion above. Absolute error stays below ~1e-10 everywhere.
    """
    t = np.asarray(t, dtype=np.float64)
    x = np.abs(t)
    out = np.empty_like(x)
    small = x < _SERIES_CUT
    if np.any(small):
        out[small] = _j1_series(x[small])
    big = ~small
    if np.any(big):
        out[big] = _j1_asymptotic(x[big])
    return np.where(t < 0.0, -out, out)
