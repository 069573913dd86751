"""Solvers: preconditioned Krylov core, alternating updates, Newton steps.

The Krylov routine is a conjugate-gradient least-squares sweep on the
left-preconditioned system, so it tolerates the indefinite scaled Hessians
that occur off the optimal-variance manifold. The alternating (x, theta)
update and the globalized Newton step both sit on top of it; map_estimate
chains them.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ._timing import NULL_TIMER
from .errors import KrylovError
from .hessian import assemble_scaled_hessian, build_preconditioner
from .model import State, gradient, objective, optimal_theta

__all__ = [
    "SolverOptions",
    "KrylovResult",
    "SolveReport",
    "krylov_solve",
    "ias_step",
    "newton_step",
    "map_estimate",
]


@dataclass(frozen=True)
class SolverOptions:
    """Tunable tolerances shared across the solver stack."""

    krylov_tol: float = 1e-10
    krylov_max: int = 1000
    krylov_stall: int = 50  # iterations without progress before giving up
    krylov_trigger: int = 50  # iteration count that triggers a precond rebuild
    newton_tol: float = 1e-10
    max_newton: int = 50
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    alpha_init: float = 1.0
    max_step: float = 2.0  # cap on the first trial displacement in (x, phi)
    max_backtracks: int = 30
    inexact_max: int = 20  # inner-iteration cap for early-terminated solves
    warm_start: bool = True

    def __post_init__(self):
        for name in ("krylov_tol", "newton_tol", "alpha_init",
                     "max_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("armijo_c", "armijo_shrink"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        for name in ("krylov_max", "max_newton", "max_backtracks",
                     "inexact_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class KrylovResult:
    solution: np.ndarray
    iterations: int
    residual: float  # relative true residual ||rhs - op y|| / ||rhs||
    converged: bool


@dataclass
class SolveReport:
    state: State
    converged: bool
    iterations: int
    objective: float
    grad_norm: float
    history: list = field(default_factory=list)


def krylov_solve(op, rhs, *, precond=None, x0=None, tol=None, max_iter=None,
                 options=None):
    """Solve op y = rhs by CGLS on the left-preconditioned system.

    op must be symmetric (it need not be definite). Each iteration costs two
    operator applications and two preconditioner applications; the running
    product op @ y is accumulated alongside the iterate, so convergence is
    measured on the true relative residual at no extra cost. Breakdown
    without convergence returns the best iterate seen with converged=False;
    a non-finite iterate restarts once from zero and raises KrylovError on
    the second occurrence.
    """
    opts = options or SolverOptions()
    tol = opts.krylov_tol if tol is None else tol
    max_iter = opts.krylov_max if max_iter is None else max_iter
    stall = max(1, opts.krylov_stall)
    pre = (lambda v: v) if precond is None else precond.apply

    rhs = np.asarray(rhs, dtype=np.float64)
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return KrylovResult(np.zeros_like(rhs), 0, 0.0, True)

    restarted = False
    y = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64)

    while True:
        t_y = op(y) if y.any() else np.zeros_like(rhs)
        resid_true = rhs - t_y
        rel = float(np.linalg.norm(resid_true)) / rhs_norm
        best_y, best_rel = y.copy(), rel
        if rel <= tol:
            return KrylovResult(y, 0, rel, True)

        s = pre(resid_true)
        g = op(pre(s))
        p = g.copy()
        gamma = float(g @ g)
        iters = 0
        since_best = 0
        failed = False
        while iters < max_iter:
            t_p = op(p)
            q = pre(t_p)
            delta = float(q @ q)
            if not np.isfinite(delta):
                failed = True
                break
            if delta == 0.0:
                break
            alpha = gamma / delta
            y = y + alpha * p
            t_y = t_y + alpha * t_p
            s = s - alpha * q
            iters += 1
            rel = float(np.linalg.norm(rhs - t_y)) / rhs_norm
            if not np.isfinite(rel):
                failed = True
                break
            if rel < best_rel:
                best_rel, best_y = rel, y.copy()
                since_best = 0
            else:
                # at the attainable-residual floor; more sweeps cannot help
                since_best += 1
                if since_best >= stall:
                    break
            if rel <= tol:
                return KrylovResult(y, iters, rel, True)
            g = op(pre(s))
            gamma_new = float(g @ g)
            if not np.isfinite(gamma_new):
                failed = True
                break
            if gamma_new == 0.0:
                break
            p = g + (gamma_new / gamma) * p
            gamma = gamma_new

        if failed:
            if restarted:
                raise KrylovError("non-finite Krylov iterate after restart")
            restarted = True
            y = np.zeros_like(rhs)
            continue
        return KrylovResult(best_y, iters, best_rel, False)


def ias_step(problem, state, hyper, *, exact=True, options=None,
             timer=NULL_TIMER):
    """One alternating update: exact x-solve at fixed theta, then the
    componentwise optimal theta at the new x.

    The x system is pushed through w = x/sqrt(theta), where it reads
    (S A^T A S + I) w = S A^T b and is uniformly well conditioned near
    theta -> 0. exact=False terminates the inner solve early, capping it
    at inexact_max iterations; a loosened residual tolerance would stall
    instead, because a warm start that already meets it turns the whole
    update into a fixed point. Returns (new state, KrylovResult).
    """
    opts = options or SolverOptions()
    a = problem.operator
    st = np.sqrt(state.theta)

    def op(w):
        return st * (a.T @ (a @ (st * w))) + w

    rhs = st * (a.T @ problem.data)
    w0 = state.x / st if opts.warm_start else None
    with timer.section("krylov"):
        if exact:
            res = krylov_solve(op, rhs, x0=w0, tol=opts.krylov_tol,
                               max_iter=opts.krylov_max)
        else:
            res = krylov_solve(op, rhs, x0=w0, tol=opts.krylov_tol,
                               max_iter=opts.inexact_max)
    x_new = st * res.solution
    return State(x_new, optimal_theta(x_new, hyper)), res


def _objective_phi(problem, x, phi, hyper):
    """G evaluated from (x, phi) without constructing a State; non-finite
    values come back as inf for the line search to reject."""
    log_ratio = phi - np.log(hyper.vartheta)
    resid = problem.data - problem.operator @ x
    with np.errstate(over="ignore", under="ignore", divide="ignore",
                     invalid="ignore"):
        val = (
            0.5 * float(resid @ resid)
            + 0.5 * float(np.sum(x * x * np.exp(-phi)))
            - hyper.eta * float(np.sum(log_ratio))
            + float(np.sum(np.exp(hyper.r * log_ratio)))
        )
    return val if np.isfinite(val) else np.inf


def newton_step(problem, state, hyper, *, hess=None, precond=None,
                options=None, timer=NULL_TIMER):
    """One globalized Newton step in (x, phi).

    Solves H_S w = -D grad(G) (D = diag([sqrt(theta); 1])), maps back to a
    step (dx, dphi) = (sqrt(theta) w_1, w_2), and backtracks under the
    Armijo condition G(z + a dz) <= G(z) + c a <grad, dz>. The first trial
    displacement is capped at options.max_step, which tempers the long
    over-steps Newton takes before the quadratic model is trustworthy. If
    the direction is not a descent direction, or no trial point makes
    progress, one exact alternating step is substituted. Returns
    (new state, info dict) with step_norm measured on the accepted (x, phi)
    displacement.
    """
    opts = options or SolverOptions()
    if hess is None:
        hess = assemble_scaled_hessian(problem, state, hyper)
    n = state.n
    g = gradient(problem, state, hyper)
    rhs = -np.concatenate([hess.sqrt_theta * g[:n], g[n:]])
    with timer.section("krylov"):
        res = krylov_solve(hess.matvec, rhs, precond=precond,
                           tol=opts.krylov_tol, max_iter=opts.krylov_max,
                           options=opts)
    dx = hess.sqrt_theta * res.solution[:n]
    dphi = res.solution[n:]
    dz = np.concatenate([dx, dphi])
    slope = float(g @ dz)

    info = {
        "krylov": res,
        "alpha": 0.0,
        "backtracks": 0,
        "used_ias": False,
        "step_norm": 0.0,
    }

    if slope < 0.0:
        with timer.section("backtrack"):
            phi0 = state.phi
            g0 = _objective_phi(problem, state.x, phi0, hyper)
            dz_norm = float(np.linalg.norm(dz))
            # full Newton steps overshoot badly while the quadratic model is
            # poor, so the first trial displacement is capped at max_step
            alpha0 = opts.alpha_init
            if dz_norm > 0.0 and np.isfinite(opts.max_step):
                alpha0 = min(alpha0, opts.max_step / dz_norm)
            # once the predicted decrease falls below the rounding floor of
            # G itself the Armijo comparison is pure noise; near the
            # minimizer the full step is the right move, so take it as long
            # as the objective does not visibly rise (a stalled Krylov
            # direction can pair a tiny slope with a terrible step)
            floor = 64.0 * np.finfo(np.float64).eps * max(1.0, abs(g0))
            if -slope * alpha0 <= floor:
                trial = _objective_phi(problem, state.x + alpha0 * dx,
                                       phi0 + alpha0 * dphi, hyper)
                if trial <= g0 + floor:
                    info.update(alpha=alpha0, backtracks=0,
                                step_norm=alpha0 * dz_norm)
                    return State.from_phi(state.x + alpha0 * dx,
                                          phi0 + alpha0 * dphi), info
            alpha = alpha0
            best_alpha, best_val = None, g0
            accepted = None
            for k in range(opts.max_backtracks):
                trial = _objective_phi(problem, state.x + alpha * dx,
                                       phi0 + alpha * dphi, hyper)
                if trial <= g0 + opts.armijo_c * alpha * slope:
                    accepted = (alpha, k)
                    break
                if trial < best_val:
                    best_alpha, best_val = alpha, trial
                alpha *= opts.armijo_shrink
            if accepted is None and best_alpha is not None:
                accepted = (best_alpha, opts.max_backtracks)
        if accepted is not None:
            alpha, k = accepted
            info.update(alpha=alpha, backtracks=k,
                        step_norm=alpha * float(np.linalg.norm(dz)))
            return State.from_phi(state.x + alpha * dx,
                                  phi0 + alpha * dphi), info

    # ascent direction or a fully failed line search: fall back on one
    # exact alternating step, which always makes progress
    new_state, ias_res = ias_step(problem, state, hyper, exact=True,
                                  options=opts, timer=timer)
    step = np.concatenate([new_state.x - state.x, new_state.phi - state.phi])
    info.update(used_ias=True, ias_krylov=ias_res,
                step_norm=float(np.linalg.norm(step)))
    return new_state, info


def map_estimate(problem, hyper, *, strategy="ias_then_newton", x0=None,
                 theta0=None, ias_iters=3, options=None, precond_epsilon=0.5,
                 timer=NULL_TIMER):
    """MAP point for fixed hyperparameters.

    strategy "ias" runs up to ias_iters exact alternating updates,
    stopping early once the gradient norm reaches newton_tol;
    "inexact_ias" the same with early-terminated inner solves;
    "ias_then_newton" follows the alternating warm-up with Newton
    iterations until the gradient norm drops to newton_tol (at most
    max_newton steps). Default start is the
    flat unit signal x = 1 with variances matched to it, which puts the
    initial point on the theta-optimal manifold and lets the warm-up
    contract the variances from above (the fast direction for alternating
    updates) instead of crawling up from the floor.
    """
    opts = options or SolverOptions()
    n = problem.n
    x = np.ones(n) if x0 is None else np.asarray(x0, dtype=np.float64)
    theta = optimal_theta(x, hyper) if theta0 is None else \
        np.asarray(theta0, dtype=np.float64)
    state = State(x, theta)
    history = []

    def record(kind, st, **extra):
        history.append({
            "kind": kind,
            "objective": objective(problem, st, hyper),
            "grad_norm": float(np.linalg.norm(gradient(problem, st, hyper))),
            **extra,
        })

    if strategy not in ("ias", "inexact_ias", "ias_then_newton"):
        raise ValueError(f"unknown strategy {strategy!r}")

    exact = strategy != "inexact_ias"
    for _ in range(ias_iters):
        state, res = ias_step(problem, state, hyper, exact=exact,
                              options=opts, timer=timer)
        record("ias", state, krylov_iters=res.iterations)
        if history[-1]["grad_norm"] <= opts.newton_tol:
            break

    if strategy in ("ias", "inexact_ias"):
        last = history[-1] if history else None
        gnorm = last["grad_norm"] if last else \
            float(np.linalg.norm(gradient(problem, state, hyper)))
        return SolveReport(state, gnorm <= opts.newton_tol, len(history),
                           objective(problem, state, hyper), gnorm, history)

    converged = False
    for _ in range(opts.max_newton):
        gnorm = float(np.linalg.norm(gradient(problem, state, hyper)))
        if gnorm <= opts.newton_tol:
            converged = True
            break
        with timer.section("build_system"):
            hess = assemble_scaled_hessian(problem, state, hyper)
        with timer.section("precondition"):
            precond = build_preconditioner(hess, epsilon=precond_epsilon)
        state, info = newton_step(problem, state, hyper, hess=hess,
                                  precond=precond, options=opts, timer=timer)
        record("newton", state, krylov_iters=info["krylov"].iterations,
               alpha=info["alpha"], used_ias=info["used_ias"])
    else:
        gnorm = float(np.linalg.norm(gradient(problem, state, hyper)))
        converged = gnorm <= opts.newton_tol

    gnorm = float(np.linalg.norm(gradient(problem, state, hyper)))
    return SolveReport(state, converged, len(history),
                       objective(problem, state, hyper), gnorm, history)
