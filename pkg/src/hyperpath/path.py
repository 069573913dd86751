"""Continuation over the hyperparameters (r, eta, vartheta).

A HyperPath is a piecewise-linear schedule through hyperparameter space;
segment i covers t in [i, i+1]. Differentiating the stationarity condition
grad G(z(t); psi(t)) = 0 along the schedule gives the tangent system

    H_S w = c,   c = -d/dt grad_phi G  (x block zero),   dz/dt = D w,

with D = diag([sqrt(theta); 1]). follow_path integrates it with an Euler
predictor and a configurable corrector, halving the local step on
rejection and rebuilding the Woodbury preconditioner on a schedule or when
Krylov iteration counts spike.
"""

from dataclasses import dataclass, field

import numpy as np

from ._timing import PhaseTimer
from .errors import KrylovError, PenaltySingularError
from .hessian import (
    assemble_scaled_hessian,
    build_preconditioner,
    condition_diagnostics,
)
from .model import HyperParameters, State, gradient, objective
from .solvers import SolverOptions, ias_step, krylov_solve, map_estimate, newton_step

__all__ = [
    "HyperPath",
    "PathTrace",
    "TRACE_COLUMNS",
    "tangent_rhs",
    "ode_rhs",
    "euler_predict",
    "follow_path",
]

TRACE_COLUMNS = (
    "t", "r", "eta", "vartheta", "objective", "grad_norm",
    "pred_step_norm", "corr_steps", "krylov_iters", "precond_rebuilt",
    "kept_cols", "eff_rank", "cond_raw", "cond_pre", "sigma_min",
)

_INT_COLUMNS = {"corr_steps", "krylov_iters", "precond_rebuilt",
                "kept_cols", "eff_rank"}


@dataclass(frozen=True, eq=False)
class HyperPath:
    """Piecewise-linear hyperparameter schedule.

    waypoints are visited in order; steps_per_segment gives the number of
    scheduled continuation steps on each segment (one value per segment).
    Each coordinate interpolates linearly, which keeps every intermediate
    point inside the valid (r, eta) region since that region is convex and
    the sign of r may not change along a path.
    """

    waypoints: tuple
    steps_per_segment: tuple

    def __post_init__(self):
        wps = tuple(self.waypoints)
        if len(wps) < 2:
            raise ValueError("a path needs at least two waypoints")
        if not all(isinstance(w, HyperParameters) for w in wps):
            raise TypeError("waypoints must be HyperParameters")
        signs = {np.sign(w.r) for w in wps}
        if len(signs) != 1:
            raise ValueError("r must keep one sign along the path")
        shapes = {w.vartheta.shape for w in wps}
        if len(shapes) != 1:
            raise ValueError("vartheta shapes must match across waypoints")
        steps = self.steps_per_segment
        if isinstance(steps, (int, np.integer)):
            steps = (int(steps),) * (len(wps) - 1)
        steps = tuple(int(s) for s in steps)
        if len(steps) != len(wps) - 1 or any(s < 1 for s in steps):
            raise ValueError("need a positive step count per segment")
        object.__setattr__(self, "waypoints", wps)
        object.__setattr__(self, "steps_per_segment", steps)

    @property
    def num_segments(self):
        return len(self.waypoints) - 1

    @property
    def t_end(self):
        return float(self.num_segments)

    @property
    def schedule(self):
        """Scheduled parameter values, including both endpoints."""
        ts = [0.0]
        for i, steps in enumerate(self.steps_per_segment):
            ts.extend(i + (j + 1) / steps for j in range(steps))
        ts[-1] = self.t_end  # exact endpoint
        return np.array(ts)

    def _segment(self, t):
        i = int(np.floor(t))
        return min(max(i, 0), self.num_segments - 1)

    def at(self, t):
        """Hyperparameters at path parameter t in [0, num_segments]."""
        t = float(t)
        if not 0.0 <= t <= self.t_end:
            raise ValueError(f"t = {t} outside [0, {self.t_end}]")
        i = self._segment(t)
        s = t - i
        a, b = self.waypoints[i], self.waypoints[i + 1]
        return HyperParameters(
            (1 - s) * a.r + s * b.r,
            (1 - s) * a.eta + s * b.eta,
            (1 - s) * a.vartheta + s * b.vartheta,
        )

    def derivative(self, t):
        """(dr/dt, deta/dt, dvartheta/dt) on the segment containing t
        (right-continuous; the final point uses its own segment)."""
        i = self._segment(float(t))
        a, b = self.waypoints[i], self.waypoints[i + 1]
        return b.r - a.r, b.eta - a.eta, b.vartheta - a.vartheta


def tangent_rhs(state, hyper, dhyper):
    """Right-hand side c = -d/dt grad G of the tangent system.

    Only the phi block of the gradient depends on the hyperparameters, so
    the x block of c vanishes; this also makes c invariant under the
    diagonal scaling D.
    """
    dr, deta, dvartheta = dhyper
    ratio = state.theta / hyper.vartheta
    ratio_pow = ratio**hyper.r
    d_r = ratio_pow * (1.0 + hyper.r * np.log(ratio))
    d_vt = -(hyper.r * hyper.r / hyper.vartheta) * ratio_pow
    c_phi = -(d_r * dr - deta + d_vt * dvartheta)
    return np.concatenate([np.zeros(state.n), c_phi])


def ode_rhs(problem, state, hyper, dhyper, *, hess=None, precond=None,
            options=None, w0=None):
    """Tangent dz/dt in (x, phi) at a point on the solution manifold.

    Solves H_S w = c and maps back through D. A zero schedule derivative
    short-circuits to an exactly zero tangent. Returns (dz/dt, KrylovResult).
    """
    opts = options or SolverOptions()
    if hess is None:
        hess = assemble_scaled_hessian(problem, state, hyper)
    c = tangent_rhs(state, hyper, dhyper)
    res = krylov_solve(hess.matvec, c, precond=precond, x0=w0,
                       tol=opts.krylov_tol, max_iter=opts.krylov_max)
    n = state.n
    w = res.solution
    dzdt = np.concatenate([hess.sqrt_theta * w[:n], w[n:]])
    return dzdt, res


def euler_predict(state, dzdt, dt):
    """Euler step in (x, phi); None when the step leaves the feasible
    region through overflow or a collapsed variance."""
    n = state.n
    x_new = state.x + dt * dzdt[:n]
    phi_new = state.phi + dt * dzdt[n:]
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(phi_new))):
        return None
    theta_new = np.exp(phi_new)
    if not np.all(np.isfinite(theta_new)) or not np.all(theta_new > 0):
        return None
    return State(x_new, theta_new)


@dataclass
class PathTrace:
    """Scheduled-point record of one continuation run."""

    rows: list
    states: list
    hypers: list
    aborted: bool = False
    timing: dict = field(default_factory=dict)

    @property
    def final_state(self):
        return self.states[-1]

    def to_csv(self, path):
        lines = [",".join(TRACE_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt_cell(col, row.get(col))
                                  for col in TRACE_COLUMNS))
        text = "\n".join(lines) + "\n"
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _fmt_cell(col, value):
    if col in _INT_COLUMNS:
        return str(int(value))
    return repr(float(value))


def _vartheta_scalar(hyper):
    return float(np.mean(hyper.vartheta))


def follow_path(problem, path, *, options=None, corrector="newton",
                predictor=True, correction_steps=1, precond_epsilon=0.5,
                rebuild_every=1, diagnostics=False,
                init_strategy="ias_then_newton", init_ias_iters=3,
                x0=None, theta0=None, max_halvings=5, reject_growth=0.1,
                bifurcation_rtol=1e-10, timer=None):
    """Track the MAP point along a hyperparameter schedule.

    Starts from the MAP estimate at psi(0), then per scheduled step runs
    the Euler predictor on the tangent system followed by the chosen
    corrector ("newton", "ias", "inexact_ias", or "none"); predictor=False
    moves the hyperparameters without the tangent step. A step is rejected
    when the tangent solve fails, prediction leaves the feasible region,
    or correction increases the objective by more than reject_growth
    relative; rejection halves the local step, and after max_halvings the
    run returns what it has with aborted=True.

    The preconditioner is refreshed at the predicted point before each
    correction (a stale one can stall the corrector solve near the
    singular crossing), and again at every rebuild_every-th scheduled
    point or whenever the step's Krylov work exceeds krylov_trigger
    iterations. With diagnostics=True each scheduled row carries condition
    estimates, and a near-singular scaled Hessian (sigma_min below
    bifurcation_rtol times sigma_max) downgrades the next step to
    corrector-only.

    Returns a PathTrace whose rows/states/hypers align with path.schedule.
    """
    opts = options or SolverOptions()
    own_timer = timer is None
    timer = PhaseTimer() if own_timer else timer
    if corrector not in ("newton", "ias", "inexact_ias", "none"):
        raise ValueError(f"unknown corrector {corrector!r}")

    with timer.section("total"):
        trace = _follow_path_inner(
            problem, path, opts, corrector, predictor, correction_steps,
            precond_epsilon, rebuild_every, diagnostics, init_strategy,
            init_ias_iters, x0, theta0, max_halvings, reject_growth,
            bifurcation_rtol, timer,
        )
    trace.timing = timer.as_dict()
    return trace


def _follow_path_inner(problem, path, opts, corrector, predictor,
                       correction_steps, precond_epsilon, rebuild_every,
                       diagnostics, init_strategy, init_ias_iters, x0,
                       theta0, max_halvings, reject_growth,
                       bifurcation_rtol, timer):
    schedule = path.schedule
    hyper0 = path.at(0.0)
    init = map_estimate(problem, hyper0, strategy=init_strategy,
                        ias_iters=init_ias_iters, x0=x0, theta0=theta0,
                        options=opts, precond_epsilon=precond_epsilon,
                        timer=timer)
    state = init.state

    rows, states, hypers = [], [], []
    with timer.section("build_system"):
        hess = assemble_scaled_hessian(problem, state, hyper0)
    with timer.section("precondition"):
        precond = build_preconditioner(hess, epsilon=precond_epsilon)

    def point_row(t, hyper, *, pred_norm, corr_steps, kry, rebuilt):
        diag = condition_diagnostics(hess, precond) if diagnostics else None
        row = {
            "t": float(t),
            "r": hyper.r,
            "eta": hyper.eta,
            "vartheta": _vartheta_scalar(hyper),
            "objective": objective(problem, state, hyper),
            "grad_norm": float(np.linalg.norm(gradient(problem, state, hyper))),
            "pred_step_norm": pred_norm,
            "corr_steps": corr_steps,
            "krylov_iters": kry,
            "precond_rebuilt": int(rebuilt),
            "kept_cols": int(precond.kept.size) if precond is not None else -1,
            "eff_rank": int(precond.rank) if precond is not None else -1,
            "cond_raw": diag["cond"] if diag else np.nan,
            "cond_pre": (diag["cond_preconditioned"]
                         if diag and diag["cond_preconditioned"] is not None
                         else np.nan),
            "sigma_min": diag["sigma_min"] if diag else np.nan,
        }
        if diag:
            row["bifurcation"] = bool(
                diag["sigma_min"] < bifurcation_rtol * diag["sigma_max"])
        return row

    init_kry = sum(h.get("krylov_iters", 0) for h in init.history)
    row = point_row(schedule[0], hyper0, pred_norm=0.0,
                    corr_steps=len(init.history), kry=init_kry, rebuilt=1)
    rows.append(row)
    states.append(state)
    hypers.append(hyper0)

    last_w = None
    aborted = False
    tiny = np.finfo(np.float64).tiny

    for k in range(len(schedule) - 1):
        t_goal = float(schedule[k + 1])
        t_cur = float(schedule[k])
        dt = t_goal - t_cur
        halvings = 0
        pred_norm = 0.0
        corr_count = 0
        kry_count = 0
        rebuilt = 0
        bif_step = bool(rows[-1].get("bifurcation", False))

        while t_cur < t_goal:
            dt = min(dt, t_goal - t_cur)
            t_next = t_goal if dt >= (t_goal - t_cur) * (1 - 1e-12) \
                else t_cur + dt
            hyper_cur = path.at(t_cur)
            hyper_new = path.at(t_next)
            rejected = False
            dz = None
            pred_state = state

            if predictor and not bif_step:
                # a tangent solve that merely stalled short of tolerance is
                # still a usable predictor direction; only a hard Krylov
                # failure or an infeasible prediction rejects the step
                try:
                    with timer.section("krylov"):
                        dz, res_ode = ode_rhs(
                            problem, state, hyper_cur, path.derivative(t_cur),
                            hess=hess, precond=precond, options=opts,
                            w0=last_w if opts.warm_start else None)
                except (KrylovError, PenaltySingularError):
                    dz, res_ode = None, None
                    rejected = True
                if not rejected:
                    kry_count += res_ode.iterations
                    if not np.all(np.isfinite(dz)):
                        rejected = True
                    else:
                        last_w = res_ode.solution
                        pred_state = euler_predict(state, dz, dt)
                        if pred_state is None:
                            rejected = True
                        else:
                            # refresh the preconditioner at the predicted
                            # point before correcting: one Euler step is
                            # enough staleness to stall the corrector solve
                            # near the singular crossing, and a stalled
                            # solve turns rounding noise into branch
                            # selection
                            with timer.section("build_system"):
                                hess = assemble_scaled_hessian(
                                    problem, pred_state, hyper_new)
                            try:
                                with timer.section("precondition"):
                                    precond = build_preconditioner(
                                        hess, epsilon=precond_epsilon)
                                rebuilt = 1
                            except PenaltySingularError:
                                pass  # keep the previous preconditioner

            if not rejected:
                g_pred = objective(problem, pred_state, hyper_new,
                                   check=False)
                if not np.isfinite(g_pred):
                    rejected = True

            if not rejected:
                corr_state = pred_state
                try:
                    for _ in range(correction_steps if corrector != "none"
                                   else 0):
                        # skip the correction once the point is already
                        # converged; polishing at the rounding floor only
                        # jitters the state
                        gn = float(np.linalg.norm(
                            gradient(problem, corr_state, hyper_new)))
                        if gn <= opts.newton_tol:
                            break
                        if corrector == "newton":
                            with timer.section("build_system"):
                                hess_c = assemble_scaled_hessian(
                                    problem, corr_state, hyper_new)
                            corr_state, info = newton_step(
                                problem, corr_state, hyper_new, hess=hess_c,
                                precond=precond, options=opts, timer=timer)
                            corr_count += 1
                            kry_count += info["krylov"].iterations
                            if info["used_ias"]:
                                kry_count += info["ias_krylov"].iterations
                            if info["step_norm"] <= opts.newton_tol:
                                break
                        else:
                            corr_state, res_c = ias_step(
                                problem, corr_state, hyper_new,
                                exact=(corrector == "ias"), options=opts,
                                timer=timer)
                            corr_count += 1
                            kry_count += res_c.iterations
                except (KrylovError, PenaltySingularError):
                    rejected = True
                if not rejected:
                    g_corr = objective(problem, corr_state, hyper_new,
                                       check=False)
                    if not np.isfinite(g_corr) or \
                            (g_corr - g_pred) / max(abs(g_pred), tiny) \
                            > reject_growth:
                        rejected = True

            if rejected:
                halvings += 1
                if halvings > max_halvings:
                    aborted = True
                    break
                dt *= 0.5
                continue

            if dz is not None:
                pred_norm += dt * float(np.linalg.norm(dz))
            state = corr_state
            t_cur = t_next
            if t_cur < t_goal:
                with timer.section("build_system"):
                    hess = assemble_scaled_hessian(problem, state,
                                                   path.at(t_cur))

        if aborted:
            break

        hyper_arr = path.at(t_goal)
        with timer.section("build_system"):
            hess = assemble_scaled_hessian(problem, state, hyper_arr)
        if ((k + 1) % rebuild_every == 0) or \
                kry_count > opts.krylov_trigger:
            try:
                with timer.section("precondition"):
                    precond = build_preconditioner(hess,
                                                   epsilon=precond_epsilon)
                rebuilt = 1
            except PenaltySingularError:
                pass  # reuse the previous preconditioner at this point
        rows.append(point_row(t_goal, hyper_arr, pred_norm=pred_norm,
                              corr_steps=corr_count, kry=kry_count,
                              rebuilt=rebuilt))
        states.append(state)
        hypers.append(hyper_arr)

    return PathTrace(rows=rows, states=states, hypers=hypers,
                     aborted=aborted)
