"""Krylov core, alternating updates, Newton steps, and the combined driver.

Oracles are dense direct solves and closed forms; descent and convergence
checks run on the deconvolution instance shared through conftest.
"""

import numpy as np
import pytest

from hyperpath.hessian import assemble_scaled_hessian, build_preconditioner
from hyperpath.model import (
    HyperParameters,
    Problem,
    State,
    gradient,
    objective,
    optimal_theta,
    theta_lower_bound,
)
from hyperpath.solvers import (
    SolverOptions,
    ias_step,
    krylov_solve,
    map_estimate,
    newton_step,
)

from conftest import random_problem


# ----------------------------------------------------------------- options

def test_solver_options_validation():
    SolverOptions()
    with pytest.raises(ValueError):
        SolverOptions(krylov_tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(newton_tol=-1.0)
    with pytest.raises(ValueError):
        SolverOptions(armijo_c=1.0)
    with pytest.raises(ValueError):
        SolverOptions(armijo_shrink=0.0)
    with pytest.raises(ValueError):
        SolverOptions(max_newton=0)
    opts = SolverOptions().with_(newton_tol=1e-8)
    assert opts.newton_tol == 1e-8
    assert opts.krylov_tol == 1e-10


# ------------------------------------------------------------------ krylov

def test_krylov_identity_one_iteration():
    rng = np.random.default_rng(40)
    v = rng.standard_normal(7)
    res = krylov_solve(lambda y: y, v)
    assert res.converged
    assert res.iterations == 1
    assert np.allclose(res.solution, v, rtol=1e-12)


def test_krylov_diagonal_pin():
    d = np.array([1.0, 2.0])
    res = krylov_solve(lambda y: d * y, np.array([1.0, 2.0]))
    assert res.converged
    assert np.allclose(res.solution, [1.0, 1.0], rtol=1e-10)


def test_krylov_vs_dense_solve():
    rng = np.random.default_rng(41)
    m = rng.standard_normal((20, 20))
    spd = m @ m.T + 20 * np.eye(20)
    rhs = rng.standard_normal(20)
    res = krylov_solve(lambda y: spd @ y, rhs)
    want = np.linalg.solve(spd, rhs)
    assert res.converged
    assert np.linalg.norm(res.solution - want) <= 1e-8 * np.linalg.norm(want)


def test_krylov_residual_contract():
    # on success the reported relative residual must satisfy the tolerance
    rng = np.random.default_rng(42)
    m = rng.standard_normal((15, 15))
    spd = m @ m.T + 15 * np.eye(15)
    rhs = rng.standard_normal(15)
    res = krylov_solve(lambda y: spd @ y, rhs, tol=1e-9)
    assert res.converged
    assert res.residual <= 1e-9
    true_rel = np.linalg.norm(rhs - spd @ res.solution) / np.linalg.norm(rhs)
    assert true_rel <= 2e-9


def test_krylov_zero_rhs():
    res = krylov_solve(lambda y: 2.0 * y, np.zeros(4))
    assert res.converged
    assert res.iterations == 0
    assert np.all(res.solution == 0.0)


def test_krylov_warm_start_not_slower(decon, convex_hyper):
    x = np.ones(decon.n)
    st = State(x, optimal_theta(x, convex_hyper))
    hess = assemble_scaled_hessian(decon, st, convex_hyper)
    rng = np.random.default_rng(43)
    rhs = rng.standard_normal(2 * decon.n)
    cold = krylov_solve(hess.matvec, rhs)
    near = cold.solution + 1e-6 * rng.standard_normal(2 * decon.n)
    warm = krylov_solve(hess.matvec, rhs, x0=near)
    assert warm.converged and cold.converged
    assert warm.iterations <= cold.iterations


# --------------------------------------------------------------- ias step

def test_ias_ridge_closed_form():
    # A = I and constant theta: the x update is scalar Tikhonov
    n = 5
    b = np.array([1.0, -2.0, 0.5, 3.0, -0.25])
    c = 0.7
    prob = Problem(np.eye(n), b)
    hyper = HyperParameters(1.0, 1.0, 1.0)
    st = State(np.zeros(n), np.full(n, c))
    new, res = ias_step(prob, st, hyper)
    assert res.converged
    assert np.allclose(new.x, b * c / (1.0 + c), rtol=1e-10)
    assert np.allclose(new.theta, optimal_theta(new.x, hyper), rtol=0, atol=0)


def test_ias_zero_data_one_step():
    rng = np.random.default_rng(44)
    prob = Problem(rng.standard_normal((6, 8)), np.zeros(6))
    hyper = HyperParameters(1.5, 1.5, 1e-5)
    st = State(rng.standard_normal(8), rng.uniform(0.5, 2.0, 8))
    new, _ = ias_step(prob, st, hyper)
    assert np.allclose(new.x, 0.0, atol=1e-12)
    assert np.allclose(new.theta, theta_lower_bound(hyper, 8), rtol=1e-12)


def test_ias_x_update_solves_quadratic_exactly():
    # at fixed theta the x update is the minimizer of a quadratic; one
    # step must land on the dense-solve answer
    rng = np.random.default_rng(45)
    prob = random_problem(rng, 12, 9)
    hyper = HyperParameters(1.2, 0.8, 1e-3)
    theta = rng.uniform(0.5, 2.0, 9)
    st = State(rng.standard_normal(9), theta)
    new, _ = ias_step(prob, st, hyper)
    a = prob.operator
    want = np.linalg.solve(a.T @ a + np.diag(1.0 / theta), a.T @ prob.data)
    assert np.allclose(new.x, want, rtol=1e-8, atol=1e-10)


def test_ias_monotone_descent(decon, convex_hyper):
    st = State(np.ones(decon.n), optimal_theta(np.ones(decon.n), convex_hyper))
    prev = objective(decon, st, convex_hyper)
    for _ in range(10):
        st, _ = ias_step(decon, st, convex_hyper)
        cur = objective(decon, st, convex_hyper)
        assert cur < prev
        prev = cur


def test_ias_inexact_still_descends(decon, convex_hyper):
    st = State(np.ones(decon.n), optimal_theta(np.ones(decon.n), convex_hyper))
    prev = objective(decon, st, convex_hyper)
    for _ in range(5):
        st, res = ias_step(decon, st, convex_hyper, exact=False)
        cur = objective(decon, st, convex_hyper)
        assert cur < prev
        prev = cur


# ------------------------------------------------------------- newton step

def test_newton_no_move_at_minimizer(decon, convex_hyper):
    rep = map_estimate(decon, convex_hyper)
    assert rep.converged
    new, info = newton_step(decon, rep.state, convex_hyper)
    assert info["step_norm"] <= SolverOptions().newton_tol
    assert not info["used_ias"]


def test_newton_quadratic_convergence(decon, convex_hyper):
    # high-accuracy reference by pushing the newton tolerance to the
    # rounding floor; the run cannot flag convergence at 1e-13 but the
    # gradient it leaves behind is as small as the arithmetic allows
    rep = map_estimate(decon, convex_hyper,
                       options=SolverOptions(newton_tol=1e-13))
    assert rep.grad_norm <= 1e-10
    z_star = np.concatenate([rep.state.x, rep.state.phi])

    rng = np.random.default_rng(46)
    z = z_star + 1e-3 * rng.standard_normal(z_star.size)
    st = State.from_phi(z[:decon.n], z[decon.n:])
    # one globalized step to re-enter the quadratic-model region (the
    # level sets are nearly flat along the floored log-variances, so the
    # first step can wander in z while descending in G)
    st, _ = newton_step(decon, st, convex_hyper)
    err = np.linalg.norm(np.concatenate([st.x, st.phi]) - z_star)
    ratios = []
    for _ in range(3):
        st, info = newton_step(decon, st, convex_hyper)
        new_err = np.linalg.norm(np.concatenate([st.x, st.phi]) - z_star)
        ratios.append(new_err / err ** 2)
        err = new_err
    assert err <= 1e-7
    assert max(ratios) < 100.0


def test_newton_falls_back_to_ias_when_stuck(decon, sparse_hyper):
    # a gradient-free-but-coarse state in the nonconvex regime may reject
    # the newton direction; the step must still make progress via the
    # alternating fallback rather than silently stalling
    x = np.ones(decon.n)
    st = State(x, optimal_theta(x, sparse_hyper))
    base = objective(decon, st, sparse_hyper)
    new, info = newton_step(decon, st, sparse_hyper)
    assert objective(decon, new, sparse_hyper) < base


# ------------------------------------------------------------ map_estimate

def test_map_zero_data_immediate(convex_hyper):
    rng = np.random.default_rng(47)
    prob = Problem(rng.standard_normal((5, 6)), np.zeros(5))
    rep = map_estimate(prob, convex_hyper)
    assert rep.converged
    assert rep.iterations <= 2
    assert np.allclose(rep.state.x, 0.0, atol=1e-12)
    assert np.allclose(rep.state.theta, theta_lower_bound(convex_hyper, 6),
                       rtol=1e-12)


def test_map_accelerated_beats_plain_ias(decon, convex_hyper):
    # 3 alternating steps then newton vs the same total count of plain
    # alternating steps; the accelerated run must reach the tolerance and
    # end strictly lower. The desk-scale newton count is 6; anything past
    # 8 is a regression.
    acc = map_estimate(decon, convex_hyper, strategy="ias_then_newton",
                       ias_iters=3)
    assert acc.converged
    assert acc.grad_norm <= 1e-10
    newton_steps = sum(1 for h in acc.history if h["kind"] == "newton")
    assert newton_steps <= 8

    total = len(acc.history)
    plain = map_estimate(decon, convex_hyper, strategy="ias",
                         ias_iters=total)
    obj_plain_at_total = plain.history[total - 1]["objective"]
    assert acc.objective < obj_plain_at_total


def test_map_history_schema(decon, convex_hyper):
    rep = map_estimate(decon, convex_hyper, ias_iters=2)
    kinds = [h["kind"] for h in rep.history]
    assert kinds[:2] == ["ias", "ias"]
    assert "newton" in kinds
    for h in rep.history:
        assert set(h) >= {"kind", "objective", "grad_norm", "krylov_iters"}
        if h["kind"] == "newton":
            assert "alpha" in h and "used_ias" in h
    objs = [h["objective"] for h in rep.history if h["kind"] == "ias"]
    assert all(b < a for a, b in zip(objs, objs[1:]))


def test_map_convex_regime_unique_minimum(decon, convex_hyper):
    # r >= 1 is the provably unique-minimizer regime; ten scattered starts
    # must agree
    rng = np.random.default_rng(48)
    sols = []
    for _ in range(10):
        x0 = rng.standard_normal(decon.n)
        rep = map_estimate(decon, convex_hyper, x0=x0,
                           theta0=optimal_theta(x0, convex_hyper))
        assert rep.converged
        sols.append(rep.state.x)
    ref = sols[0]
    scale = np.linalg.norm(ref)
    for s in sols[1:]:
        assert np.linalg.norm(s - ref) <= 1e-6 * scale


def test_map_inexact_strategy_converges(decon, convex_hyper):
    rep = map_estimate(decon, convex_hyper, strategy="inexact_ias",
                       ias_iters=60)
    assert rep.grad_norm < 1e-2


def test_map_unknown_strategy(decon, convex_hyper):
    with pytest.raises(ValueError):
        map_estimate(decon, convex_hyper, strategy="nope")
