"""Hyperparameter paths, the tangent ODE, and the tracking driver.

Oracles: implicit differentiation of the variance floor, re-solved
finite differences of the minimizer curve, and a synthetic quadratic
trajectory for the Euler step.
"""

import numpy as np
import pytest

from hyperpath.model import (
    HyperParameters,
    Problem,
    State,
    gradient,
    optimal_theta,
    theta_lower_bound,
)
from hyperpath.path import (
    TRACE_COLUMNS,
    HyperPath,
    euler_predict,
    follow_path,
    ode_rhs,
    tangent_rhs,
)
from hyperpath.solvers import SolverOptions, map_estimate

from conftest import random_problem

DECON_PATH = (
    HyperParameters(1.5, 1.5, 1e-5),
    HyperParameters(0.5, 1e-5, 1e-6),
)


# -------------------------------------------------------------- hyper path

def test_path_endpoints_and_midpoint():
    path = HyperPath(DECON_PATH, 60)
    h0 = path.at(0.0)
    assert (h0.r, h0.eta, float(h0.vartheta)) == (1.5, 1.5, 1e-5)
    h1 = path.at(path.t_end)
    assert (h1.r, h1.eta, float(h1.vartheta)) == (0.5, 1e-5, 1e-6)
    mid = path.at(0.5 * path.t_end)
    assert mid.r == pytest.approx(1.0, rel=1e-15)
    assert mid.eta == pytest.approx(0.5 * (1.5 + 1e-5), rel=1e-15)
    assert float(mid.vartheta) == pytest.approx(0.5 * (1e-5 + 1e-6), rel=1e-15)


def test_path_schedule_shape():
    path = HyperPath(DECON_PATH, 60)
    ts = path.schedule
    assert ts.shape == (61,)
    assert ts[0] == 0.0 and ts[-1] == 1.0
    assert np.all(np.diff(ts) > 0)
    multi = HyperPath(
        (DECON_PATH[0], DECON_PATH[1], HyperParameters(0.5, 1e-5, 1e-7)),
        (10, 5),
    )
    assert multi.schedule.shape == (16,)
    assert multi.t_end == 2


def test_path_validation():
    with pytest.raises(ValueError):
        HyperPath((DECON_PATH[0],), 10)
    with pytest.raises(ValueError):
        HyperPath(DECON_PATH, 0)
    path = HyperPath(DECON_PATH, 10)
    with pytest.raises(ValueError):
        path.at(-0.01)
    with pytest.raises(ValueError):
        path.at(1.01)


def test_path_interior_points_stay_valid():
    # linear interpolation of valid endpoints stays in the valid region
    path = HyperPath(DECON_PATH, 60)
    for t in path.schedule:
        hyper = path.at(t)
        assert hyper.r > 0 and hyper.eta > 0
        assert np.all(hyper.vartheta > 0)


def test_path_derivative_is_segment_slope():
    path = HyperPath(DECON_PATH, 60)
    dr, deta, dvt = path.derivative(0.3)
    assert dr == pytest.approx(0.5 - 1.5, rel=1e-12)
    assert deta == pytest.approx(1e-5 - 1.5, rel=1e-12)
    assert dvt == pytest.approx(1e-6 - 1e-5, rel=1e-12)


# ---------------------------------------------------------------- ode rhs

def test_ode_rhs_zero_schedule_derivative(decon, convex_hyper):
    x = np.ones(decon.n)
    st = State(x, optimal_theta(x, convex_hyper))
    dzdt, res = ode_rhs(decon, st, convex_hyper, (0.0, 0.0, 0.0))
    assert np.all(dzdt == 0.0)
    assert res.iterations == 0


def test_tangent_rhs_x_block_vanishes(decon, convex_hyper):
    rng = np.random.default_rng(50)
    x = rng.standard_normal(decon.n)
    st = State(x, optimal_theta(x, convex_hyper))
    c = tangent_rhs(st, convex_hyper, (-1.0, -1.5, -9e-6))
    assert np.all(c[:decon.n] == 0.0)
    assert np.any(c[decon.n:] != 0.0)


def test_ode_rhs_floor_regime_implicit_diff():
    # x identically zero, only the scale parameter moving: the optimal
    # variances ride the floor vartheta*(eta/r)^(1/r), so their velocity
    # is that constant times dvartheta/dt, and x does not move
    n = 6
    hyper = HyperParameters(1.2, 0.9, 1e-4)
    prob = Problem(np.eye(n), np.zeros(n))
    st = State(np.zeros(n), theta_lower_bound(hyper, n))
    dvt = -3e-5
    dzdt, _ = ode_rhs(prob, st, hyper, (0.0, 0.0, dvt))
    dxdt = dzdt[:n]
    dtheta_dt = st.theta * dzdt[n:]  # dtheta = theta * dphi
    want = (hyper.eta / hyper.r) ** (1.0 / hyper.r) * dvt
    assert np.allclose(dxdt, 0.0, atol=1e-14)
    assert np.allclose(dtheta_dt, want, rtol=1e-9)


def test_ode_rhs_vs_resolved_curve():
    # re-solve the minimizer on both sides of a path point and difference;
    # the tangent must match to 1e-3 relative at delta = 1e-4
    rng = np.random.default_rng(51)
    prob = random_problem(rng, 4, 4, noise=0.02)
    path = HyperPath((HyperParameters(1.5, 1.2, 1e-3),
                      HyperParameters(1.1, 0.6, 1e-4)), 1)
    t0 = 0.4
    opts = SolverOptions(newton_tol=1e-12)

    def solve_at(t):
        hyper = path.at(t)
        rep = map_estimate(prob, hyper, options=opts)
        assert rep.grad_norm <= 1e-11
        return np.concatenate([rep.state.x, rep.state.phi]), hyper, rep.state

    z0, hyper0, st0 = solve_at(t0)
    delta = 1e-4
    zp, _, _ = solve_at(t0 + delta)
    zm, _, _ = solve_at(t0 - delta)
    fd = (zp - zm) / (2 * delta)
    dzdt, _ = ode_rhs(prob, st0, hyper0, path.derivative(t0))
    assert np.linalg.norm(dzdt - fd) <= 1e-3 * np.linalg.norm(fd)


# ------------------------------------------------------------------ euler

def test_predict_identity_cases():
    st = State(np.array([1.0, -2.0]), np.array([0.5, 2.0]))
    same = euler_predict(st, np.zeros(4), 0.25)
    assert np.array_equal(same.x, st.x)
    assert np.allclose(same.theta, st.theta, rtol=1e-15)
    same2 = euler_predict(st, np.ones(4), 0.0)
    assert np.array_equal(same2.x, st.x)
    assert np.allclose(same2.theta, st.theta, rtol=1e-15)


def test_predict_quadratic_trajectory_order():
    # z*(t) = z0 + v t + w t^2 in (x, phi); the euler step from the exact
    # tangent misses by exactly w dt^2, so halving dt quarters the error
    rng = np.random.default_rng(52)
    n = 5
    z0 = rng.standard_normal(2 * n)
    v = rng.standard_normal(2 * n)
    w = rng.standard_normal(2 * n)
    t0 = 0.3

    def z_of(t):
        return z0 + v * t + w * t * t

    zc = z_of(t0)
    st = State.from_phi(zc[:n], zc[n:])
    dzdt = v + 2 * w * t0
    errs = []
    for dt in (0.1, 0.05):
        pred = euler_predict(st, dzdt, dt)
        zp = np.concatenate([pred.x, pred.phi])
        want = z_of(t0 + dt)
        err = np.linalg.norm(zp - want)
        assert err == pytest.approx(np.linalg.norm(w) * dt * dt, rel=1e-9)
        errs.append(err)
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=1e-9)


# ------------------------------------------------------------ follow_path

def test_follow_constant_path_stationary(decon, convex_hyper):
    path = HyperPath((convex_hyper, convex_hyper), 10)
    trace = follow_path(decon, path)
    assert not trace.aborted
    assert len(trace.rows) == 11
    tol = SolverOptions().newton_tol
    for row in trace.rows:
        assert row["grad_norm"] <= tol
    # the state should not drift either
    first, last = trace.states[0], trace.states[-1]
    assert np.allclose(first.x, last.x, rtol=0, atol=1e-12)


def test_follow_recovers_support(decon):
    path = HyperPath(DECON_PATH, 60)
    trace = follow_path(decon, path)
    assert not trace.aborted
    y = trace.final_state.x
    big = np.flatnonzero(np.abs(y) > 0.1 * np.abs(y).max())
    assert big.size == 5
    assert np.array_equal(big, np.flatnonzero(decon.truth))


def test_follow_predictor_only_worse(decon):
    path = HyperPath(DECON_PATH, 60)
    ref = follow_path(decon, path)
    bare = follow_path(decon, path, corrector="none")
    truth = decon.truth
    err_ref = np.linalg.norm(ref.final_state.x - truth)
    err_bare = np.linalg.norm(bare.final_state.x - truth)
    assert err_bare > err_ref


def test_follow_trace_schema(decon, convex_hyper):
    path = HyperPath((convex_hyper, HyperParameters(1.2, 1.0, 8e-6)), 5)
    trace = follow_path(decon, path, diagnostics=True)
    assert len(trace.rows) == len(trace.states) == len(trace.hypers) == 6
    for row in trace.rows:
        # diagnostics adds the bifurcation flag on top of the csv columns
        assert set(row) >= set(TRACE_COLUMNS)
        assert isinstance(row["bifurcation"], bool)
    assert trace.rows[0]["t"] == 0.0
    assert trace.rows[-1]["t"] == 1.0
    assert all(np.isfinite(row["cond_pre"]) for row in trace.rows)

    plain = follow_path(decon, HyperPath((convex_hyper, convex_hyper), 2))
    for row in plain.rows:
        assert tuple(row) == TRACE_COLUMNS
        assert np.isnan(row["cond_raw"])


def test_follow_trace_csv_round_trip(tmp_path, decon, convex_hyper):
    path = HyperPath((convex_hyper, HyperParameters(1.2, 1.0, 8e-6)), 4)
    trace = follow_path(decon, path)
    out = tmp_path / "trace.csv"
    trace.to_csv(out)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 6
    cells = lines[1].split(",")
    assert float(cells[0]) == 0.0
    assert float(cells[1]) == pytest.approx(1.5)


def test_follow_rejects_unknown_corrector(decon, convex_hyper):
    path = HyperPath((convex_hyper, convex_hyper), 2)
    with pytest.raises(ValueError):
        follow_path(decon, path, corrector="bogus")


def test_follow_explicit_start(decon, convex_hyper):
    # seeding the tracker with the already-solved start must reproduce the
    # default run
    rep = map_estimate(decon, convex_hyper)
    path = HyperPath(DECON_PATH, 10)
    a = follow_path(decon, path)
    b = follow_path(decon, path, x0=rep.state.x, theta0=rep.state.theta)
    assert np.allclose(a.final_state.x, b.final_state.x, rtol=0, atol=1e-9)
