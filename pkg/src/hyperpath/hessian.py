"""Scaled Hessian of the objective and its penalty/fidelity split.

In (x, phi) coordinates the Hessian of G is

    H = [[A^T A + D_1/theta,  -D_x/theta ],
         [-D_x/theta,          D_c       ]],   c = x^2/(2 theta) + r^2 (theta/vartheta)^r.

Symmetric scaling by D = diag([sqrt(theta); 1]) gives

    H_S = D H D = [[S A^T A S + I,  -D_x/sqrt(theta)],
                   [-D_x/sqrt(theta),          D_c   ]],   S = diag(sqrt(theta)),

which splits as H_S = H_A + H_P with H_A the fidelity block (top-left
S A^T A S, zero elsewhere) and H_P the penalty part. H_P factors as
R^T diag([1; s2]) R with unit-triangular R, so it inverts in O(n); the
Woodbury preconditioner below combines that inverse with a low-rank
capture of H_A.
"""

from dataclasses import dataclass

import numpy as np

from .errors import PenaltySingularError
from .model import theta_update

__all__ = [
    "ScaledHessian",
    "assemble_scaled_hessian",
    "penalty_inverse_apply",
    "WoodburyPreconditioner",
    "build_preconditioner",
    "apply_preconditioner",
    "condition_diagnostics",
    "invertibility_determinant",
]

# relative floor below which the corrected penalty pivot counts as singular
_PIVOT_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class ScaledHessian:
    """Matrix-free representation of H_S at a point.

    coupling = x/sqrt(theta) (the off-diagonal block is -coupling on its
    diagonal), corner = x^2/(2 theta) + r^2 (theta/vartheta)^r, and
    s2 = corner - x^2/theta is the corrected pivot of the penalty
    factorization.
    """

    operator: np.ndarray
    sqrt_theta: np.ndarray
    coupling: np.ndarray
    corner: np.ndarray
    s2: np.ndarray
    operator_nonneg: bool

    @property
    def n(self):
        return self.sqrt_theta.shape[0]

    @property
    def shape(self):
        return (2 * self.n, 2 * self.n)

    def matvec(self, v):
        """H_S @ v for v of shape (2n,) or (2n, k)."""
        n = self.n
        v1, v2 = v[:n], v[n:]
        st = self.sqrt_theta if v.ndim == 1 else self.sqrt_theta[:, None]
        cp = self.coupling if v.ndim == 1 else self.coupling[:, None]
        cn = self.corner if v.ndim == 1 else self.corner[:, None]
        fid = st * (self.operator.T @ (self.operator @ (st * v1)))
        out1 = fid + v1 - cp * v2
        out2 = -cp * v1 + cn * v2
        return np.concatenate([out1, out2], axis=0)

    def fidelity_matvec(self, w):
        """Top-left fidelity block S A^T A S applied to w (no identity)."""
        st = self.sqrt_theta if w.ndim == 1 else self.sqrt_theta[:, None]
        return st * (self.operator.T @ (self.operator @ (st * w)))

    def dense(self):
        """Explicit 2n x 2n H_S; for tests and small-scale diagnostics."""
        n = self.n
        ata = self.operator.T @ self.operator
        top = ata * self.sqrt_theta[:, None] * self.sqrt_theta[None, :]
        top[np.diag_indices(n)] += 1.0
        full = np.zeros((2 * n, 2 * n))
        full[:n, :n] = top
        idx = np.arange(n)
        full[idx, n + idx] = -self.coupling
        full[n + idx, idx] = -self.coupling
        full[n + idx, n + idx] = self.corner
        return full

    def penalty_dense(self):
        """Explicit 2n x 2n H_P (H_S with the fidelity block removed)."""
        n = self.n
        full = np.zeros((2 * n, 2 * n))
        idx = np.arange(n)
        full[idx, idx] = 1.0
        full[idx, n + idx] = -self.coupling
        full[n + idx, idx] = -self.coupling
        full[n + idx, n + idx] = self.corner
        return full


def assemble_scaled_hessian(problem, state, hyper):
    sqrt_theta = np.sqrt(state.theta)
    coupling = state.x / sqrt_theta
    ratio_pow = (state.theta / hyper.vartheta) ** hyper.r
    half_sq = 0.5 * coupling * coupling  # x^2 / (2 theta)
    corner = half_sq + hyper.r * hyper.r * ratio_pow
    s2 = hyper.r * hyper.r * ratio_pow - half_sq
    return ScaledHessian(
        operator=problem.operator,
        sqrt_theta=sqrt_theta,
        coupling=coupling,
        corner=corner,
        s2=s2,
        operator_nonneg=problem.entrywise_nonnegative,
    )


def penalty_inverse_apply(hess, v):
    """Solve H_P y = v through the R^T S R factorization; O(n) per column.

    Raises PenaltySingularError when some pivot s2 is zero relative to the
    magnitudes that cancel to produce it (r^2 (theta/vartheta)^r vs
    x^2/(2 theta)); near that set H_P loses definiteness and the
    factorization carries no information.
    """
    floor = _PIVOT_RTOL * hess.corner  # corner = sum of the two pivot parts
    if np.any(np.abs(hess.s2) <= floor):
        raise PenaltySingularError(
            "penalty pivot vanishes: r^2 (theta/vartheta)^r ~ x^2/(2 theta)"
        )
    n = hess.n
    cp = hess.coupling if v.ndim == 1 else hess.coupling[:, None]
    s2 = hess.s2 if v.ndim == 1 else hess.s2[:, None]
    v1, v2 = v[:n], v[n:]
    y2 = (v2 + cp * v1) / s2
    y1 = v1 + cp * y2
    return np.concatenate([y1, y2], axis=0)


@dataclass(frozen=True, eq=False)
class WoodburyPreconditioner:
    """Inverse of H_P + U U^T where U U^T approximates the fidelity block.

    kept holds the column indices that survived screening, rank the number
    of spectral directions retained, error_inf the exact infinity-norm of
    the residual fidelity approximation (None when n is too large to form
    it densely).
    """

    hess: ScaledHessian
    u: np.ndarray
    core_inv: np.ndarray
    kept: np.ndarray
    rank: int
    epsilon: float
    error_inf: float | None

    def apply(self, v):
        y = penalty_inverse_apply(self.hess, v)
        if self.rank == 0:
            return y
        t = self.u.T @ y
        z = self.core_inv @ t
        return y - penalty_inverse_apply(self.hess, self.u @ z)


def _abs_column_sums(hess, block=256):
    """Infinity norms of the columns of F = S A^T A S.

    An entrywise-nonnegative operator admits the one-pass form
    sqrt(theta) * (A^T (A sqrt(theta))); otherwise columns of A^T A are
    formed in blocks and summed in absolute value.
    """
    a = hess.operator
    st = hess.sqrt_theta
    if hess.operator_nonneg:
        return st * (a.T @ (a @ st))
    n = st.shape[0]
    out = np.empty(n)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        cols = a.T @ (a[:, lo:hi] * st[lo:hi])  # n x (hi-lo)
        out[lo:hi] = st @ np.abs(cols)
    return out


def build_preconditioner(hess, epsilon=0.5):
    """Build the low-rank Woodbury preconditioner at tolerance epsilon.

    Columns of the fidelity block whose absolute column sum falls below
    epsilon/2 are zeroed; a spectral decomposition of the kept submatrix is
    truncated at the smallest rank whose residual infinity norm is within
    epsilon/2. With nothing kept the preconditioner degenerates to the
    exact penalty inverse.

    error_inf reports the exact infinity norm of F - U U^T when the dense
    residual is affordable (n <= 2048); at larger sizes it is None and the
    epsilon budget rests on the screening and truncation thresholds alone.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    n = hess.n
    colsums = _abs_column_sums(hess)
    kept = np.flatnonzero(colsums >= 0.5 * epsilon)
    if kept.size == 0:
        return WoodburyPreconditioner(
            hess=hess,
            u=np.zeros((2 * n, 0)),
            core_inv=np.zeros((0, 0)),
            kept=kept,
            rank=0,
            epsilon=epsilon,
            error_inf=_exact_error_inf(hess, None, kept) if n <= 2048 else None,
        )

    # spectral decomposition of F_K = B_K^T B_K through the SVD of B_K
    b_kept = hess.operator[:, kept] * hess.sqrt_theta[kept]
    _, sing, vt = np.linalg.svd(b_kept, full_matrices=False)
    lam = sing * sing
    f_kept = vt.T @ (lam[:, None] * vt)

    resid = f_kept.copy()
    rank = 0
    limit = lam.shape[0]
    while rank < limit:
        row_sums = np.abs(resid).sum(axis=1)
        if row_sums.max() <= 0.5 * epsilon:
            break
        vec = vt[rank]
        resid -= lam[rank] * np.outer(vec, vec)
        rank += 1

    u = np.zeros((2 * n, rank))
    u[kept, :] = vt[:rank].T * np.sqrt(lam[:rank])

    if rank == 0:
        core_inv = np.zeros((0, 0))
    else:
        core = np.eye(rank) + u.T @ penalty_inverse_apply(hess, u)
        # rank stays small (tens); the explicit inverse is applied many
        # times per Krylov sweep and a factor-solve buys nothing at this size
        core_inv = np.linalg.inv(core)

    return WoodburyPreconditioner(
        hess=hess,
        u=u,
        core_inv=core_inv,
        kept=kept,
        rank=rank,
        epsilon=epsilon,
        error_inf=_exact_error_inf(hess, u, kept) if n <= 2048 else None,
    )


def _exact_error_inf(hess, u, kept):
    ata = hess.operator.T @ hess.operator
    f = ata * hess.sqrt_theta[:, None] * hess.sqrt_theta[None, :]
    if u is not None and u.shape[1] > 0:
        un = u[: hess.n]
        f = f - un @ un.T
    return float(np.abs(f).sum(axis=1).max())


def apply_preconditioner(precond, v):
    return precond.apply(v)


def condition_diagnostics(hess, precond=None, *, max_dense=4096,
                          power_iters=200, power_tol=1e-8):
    """Extreme singular values and condition numbers of H_S.

    Returns a dict with sigma_max, sigma_min, cond, cond_preconditioned
    (None without a preconditioner), and the preconditioner's kept-column
    count and effective rank (None without one). Up to 2n <= max_dense the
    values come from a dense SVD; beyond that sigma_max uses power
    iteration and sigma_min inverse iteration with preconditioned Krylov
    solves, and the preconditioned condition number tracks the eigenvalue
    range of P H_S.
    """
    kept = int(precond.kept.size) if precond is not None else None
    rank = int(precond.rank) if precond is not None else None
    two_n = 2 * hess.n
    if two_n <= max_dense:
        dense = hess.dense()
        sing = np.linalg.svd(dense, compute_uv=False)
        sigma_max = float(sing[0])
        sigma_min = float(sing[-1])
        cond_pre = None
        if precond is not None:
            pre_cols = precond.apply(dense)
            psing = np.linalg.svd(pre_cols, compute_uv=False)
            cond_pre = float(psing[0] / psing[-1])
        return {
            "sigma_max": sigma_max,
            "sigma_min": sigma_min,
            "cond": sigma_max / sigma_min if sigma_min > 0 else np.inf,
            "cond_preconditioned": cond_pre,
            "kept": kept,
            "effective_rank": rank,
        }

    from .solvers import SolverOptions, krylov_solve  # circular at module load

    rng = np.random.default_rng(0)

    def _power(op):
        y = rng.standard_normal(two_n)
        y /= np.linalg.norm(y)
        lam = 0.0
        for _ in range(power_iters):
            z = op(y)
            nz = np.linalg.norm(z)
            if nz == 0:
                return 0.0
            y_new = z / nz
            lam_new = float(abs(y_new @ op(y_new)))
            if abs(lam_new - lam) <= power_tol * max(1.0, lam_new):
                return lam_new
            lam, y = lam_new, y_new
        return lam

    sigma_max = _power(hess.matvec)
    opts = SolverOptions(krylov_tol=1e-8, krylov_max=4 * two_n)

    def _inv_apply(v):
        res = krylov_solve(hess.matvec, v, precond=precond, options=opts)
        return res.solution

    inv_norm = _power(_inv_apply)
    sigma_min = 1.0 / inv_norm if inv_norm > 0 else np.inf
    cond_pre = None
    if precond is not None:
        pre_max = _power(lambda v: precond.apply(hess.matvec(v)))
        pre_inv = _power(lambda v: _inv_apply(_precond_inverse(precond, v)))
        cond_pre = pre_max * pre_inv if pre_inv > 0 else np.inf
    return {
        "sigma_max": sigma_max,
        "sigma_min": sigma_min,
        "cond": sigma_max / sigma_min if sigma_min > 0 else np.inf,
        "cond_preconditioned": cond_pre,
        "kept": kept,
        "effective_rank": rank,
    }


def _precond_inverse(precond, v):
    """(H_P + U U^T) v; the cheap inverse of the preconditioner apply."""
    out = _penalty_matvec(precond.hess, v)
    if precond.rank:
        out = out + precond.u @ (precond.u.T @ v)
    return out


def _penalty_matvec(hess, v):
    n = hess.n
    v1, v2 = v[:n], v[n:]
    out1 = v1 - hess.coupling * v2
    out2 = -hess.coupling * v1 + hess.corner * v2
    return np.concatenate([out1, out2])


def invertibility_determinant(a, u, hyper):
    """Determinant certificate for the reduced 2x2 system of a single
    component on the optimal-variance manifold.

    For scaled forward coefficient a and nondimensional signal u != 0,
    with xi the optimal variance ratio for u, the certificate

        det = a^2 (3/(2 xi) + r^2 xi^r / u^2)
              + (1/(2 xi^2) + r^2 xi^(r-1) / u^2)

    is a sum of positive terms for every r > 0, eta > 0, so the reduced
    system is invertible everywhere on the manifold.
    """
    if u == 0.0:
        raise ValueError("certificate requires u != 0")
    xi = theta_update(float(u), hyper)
    r = hyper.r
    u_sq = u * u
    rr = r * r
    return float(
        a * a * (1.5 / xi + rr * xi**r / u_sq)
        + (0.5 / (xi * xi) + rr * xi ** (r - 1.0) / u_sq)
    )
