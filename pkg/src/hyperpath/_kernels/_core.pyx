# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar kernels: variance-update root solve and Bessel J1."""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, fabs, log, pow, sin, sqrt

from ..errors import RootSolveError

cnp.import_array()

BACKEND = "compiled"

cdef double REL_TOL = 1e-14
cdef int MAX_NEWTON = 100
cdef double SERIES_CUT = 11.0
cdef double THREE_QUARTER_PI = 2.356194490192344928846982537459627163
cdef double PI = 3.141592653589793238462643383279502884

cdef int N_ASY = 24
cdef double[24] ASY

cdef void _init_asy() noexcept:
    cdef int m
    ASY[0] = 1.0
    for m in range(1, N_ASY):
        ASY[m] = ASY[m - 1] * (4.0 - (2.0 * m - 1.0) ** 2) / (8.0 * m)

_init_asy()


cdef inline double _theta_root_scalar(double u_sq, double r, double eta,
                                      double xi_min, double inv_rp1) except -1.0:
    cdef double offset, hi, x, pw, rho, drho, denom, step
    cdef int i, k
    if u_sq <= 0.0:
        return xi_min
    offset = pow(2.0 * (0.5 * u_sq + eta) / r, inv_rp1)
    hi = xi_min + offset
    for i in range(64):
        if r * pow(hi, r + 1.0) - eta * hi - 0.5 * u_sq >= 0.0:
            break
        offset *= 2.0
        hi = xi_min + offset
    else:
        raise RootSolveError("could not bracket the variance update root")
    x = hi
    for k in range(MAX_NEWTON):
        pw = pow(x, r)
        rho = r * pw * x - eta * x - 0.5 * u_sq
        drho = r * (r + 1.0) * pw - eta
        # Halley step; the second derivative is r^2 (r+1) x^(r-1), reusing
        # the power already computed. Falls back to Newton when the
        # denominator loses positivity far from the root.
        denom = 2.0 * drho * drho - rho * (r * r * (r + 1.0) * pw / x)
        if denom > 0.0:
            step = 2.0 * rho * drho / denom
        else:
            step = rho / drho
        x -= step
        if x < xi_min:
            x = xi_min
        if fabs(step) <= REL_TOL * x:
            return x
    raise RootSolveError("variance update did not converge in 100 iterations")


def theta_root_batch(u_sq, double r, double eta):
    """Positive roots of r*xi^(r+1) - eta*xi - u_sq/2 = 0, componentwise."""
    cdef cnp.ndarray[double, ndim=1] u = np.ascontiguousarray(u_sq, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double xi_min = pow(eta / r, 1.0 / r)
    cdef double inv_rp1 = 1.0 / (r + 1.0)
    cdef Py_ssize_t j
    if r == 1.0:
        for j in range(n):
            out[j] = 0.5 * (eta + sqrt(eta * eta + 2.0 * u[j]))
        return out
    for j in range(n):
        out[j] = _theta_root_scalar(u[j], r, eta, xi_min, inv_rp1)
    return out


cdef inline double _j1_scalar(double x) noexcept:
    cdef double half, q, term, total, z, z2, zp, p, qq, chi, sign
    cdef int k
    if x < SERIES_CUT:
        half = 0.5 * x
        q = half * half
        term = half
        total = half
        for k in range(1, 60):
            term *= -q / (k * (k + 1.0))
            total += term
            if fabs(term) <= 1e-18 * (1.0 + fabs(total)):
                break
        return total
    z = 1.0 / x
    z2 = z * z
    p = 0.0
    qq = 0.0
    sign = 1.0
    zp = 1.0
    for k in range(N_ASY // 2):
        p += sign * ASY[2 * k] * zp
        qq += sign * ASY[2 * k + 1] * zp * z
        sign = -sign
        zp *= z2
    chi = x - THREE_QUARTER_PI
    return sqrt(2.0 / (PI * x)) * (p * cos(chi) - qq * sin(chi))


def bessel_j1_batch(t):
    """Bessel function of the first kind, order one, elementwise."""
    cdef cnp.ndarray[double, ndim=1] x = np.ascontiguousarray(t, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t j
    cdef double v
    for j in range(n):
        v = x[j]
        if v < 0.0:
            out[j] = -_j1_scalar(-v)
        else:
            out[j] = _j1_scalar(v)
    return out
