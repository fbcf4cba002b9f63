import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from defectrom.closure import compute_defect_trajectory
from defectrom.estimator import (DegenerateRatioError, auxiliary_residual, dual_basis, inverse_norm,
                                 lipschitz_estimate, modified_output, operator_norm, output_error_estimate,
                                 residual_corrected, residual_trajectory, rho_from_norms, solve_dual,
                                 state_error_bound, state_error_constants)
from defectrom.models import TimeGrid
from defectrom.reduction import ReducedBasis, galerkin_project, pod_update, solve_crom
from defectrom.timestepping import ImexScheme, SolverConfig, solve_blackbox, solve_imex

P = np.array([0.06])


@pytest.mark.parametrize("order", [1, 2])
def test_imposed_solution_has_zero_residual(small_fhn, order):
    grid = TimeGrid(0.0, 0.3, 0.01)
    p = [0.03, 0.05]
    X = solve_imex(small_fhn, grid, ImexScheme(order), p).states
    res = residual_trajectory(small_fhn, X, None, ImexScheme(order), p, grid)
    assert res.norms.max() <= 1e-10 * np.abs(X).max()
    assert res.norms[0] == 0.0


def test_closure_free_residual_is_negative_defect(heat, heat_grid, heat_blackbox):
    D = compute_defect_trajectory(heat_blackbox, heat, ImexScheme(1))
    R = residual_trajectory(heat, heat_blackbox.states, None, ImexScheme(1), P, heat_grid).R
    np.testing.assert_allclose(R, -D, atol=1e-14 * np.abs(D).max())
    Rc = residual_corrected(heat, heat_blackbox, D, ImexScheme(1), P)
    assert Rc.norms.max() <= 1e-12 * np.abs(D).max()
    rk, nk = residual_corrected(heat, heat_blackbox, None, ImexScheme(1), P, k=4)
    assert nk == pytest.approx(np.linalg.norm(D[:, 4]))


def test_auxiliary_identity_with_exact_defect(heat, heat_grid, heat_blackbox):
    sc = ImexScheme(1)
    D = compute_defect_trajectory(heat_blackbox, heat, sc)
    basis = pod_update(ReducedBasis.empty(heat.dim), heat_blackbox.states, 5)
    red = solve_crom(galerkin_project(heat, basis.V, sc), D, heat_grid, P)
    aux = auxiliary_residual(heat, heat_blackbox, red, D, sc, P, heat_grid)
    # the two forms differ only by cancellation in E x - E x_tilde
    assert np.abs(aux.R - aux.identity).max() <= 1e-12 * np.abs(heat_blackbox.states).max()
    A = heat.A(P).toarray()
    k = 9
    e = heat_blackbox.states[:, k] - red.lifted()[:, k]
    np.testing.assert_allclose(aux.identity[:, k], (np.eye(heat.dim) - heat_grid.dt * A) @ e, atol=1e-12)


def test_rho_hand_values_and_degenerate_cases():
    rb, rho = rho_from_norms([0.0, 2.0, 1.0, 0.0], [0.0, 1.0, 4.0, 0.0])
    np.testing.assert_allclose(rho, [2.0, 0.25, 1.0])
    assert rb == pytest.approx((2.0 + 0.25 + 1.0) / 3)
    with pytest.raises(DegenerateRatioError):
        rho_from_norms([0.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        rho_from_norms([1.0], [1.0])


def test_power_iteration_norms_against_dense():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((30, 30)) + 8 * np.eye(30)
    est = operator_norm(lambda v: M @ v, lambda w: M.T @ w, 30, iters=200, rtol=1e-12)
    assert est == pytest.approx(np.linalg.norm(M, 2), rel=1e-6)
    E = sp.csr_matrix(M)
    inv = inverse_norm(E, iters=400, rtol=1e-13)
    assert inv == pytest.approx(1.0 / np.linalg.svd(M, compute_uv=False).min(), rel=1e-4)


def test_heat_constants_match_spectrum(heat, heat_grid):
    A = heat.A(P).toarray()
    lam = np.linalg.eigvalsh(A)
    dt = heat_grid.dt
    zeta, xi = state_error_constants(heat, ImexScheme(1), P, dt, iters=200, rtol=1e-12)
    assert zeta == pytest.approx(np.max(1.0 / (1 - dt * lam)), rel=1e-6)
    assert xi == pytest.approx(zeta)
    z2, x2 = state_error_constants(heat, ImexScheme(2), P, dt, iters=400, rtol=1e-12)
    assert x2 == pytest.approx(np.max(np.abs((1 + dt * lam / 2) / (1 - dt * lam / 2))), rel=1e-5)
    _, xi_l = state_error_constants(heat, ImexScheme(1), P, dt, L_f=3.0, iters=200, rtol=1e-12)
    assert xi_l == pytest.approx(xi + dt * 3.0 * zeta, rel=1e-9)


@given(arrays(np.float64, 12, elements=st.floats(0, 10)), st.floats(0, 2), st.floats(0.1, 1.5), st.floats(0, 3))
def test_state_bound_closed_form_equals_recurrence(r, zeta, xi, e0):
    closed = state_error_bound(r, zeta, xi, e0)
    rec = [e0]
    for k in range(1, r.size):
        rec.append(xi * rec[-1] + zeta * r[k])
    np.testing.assert_allclose(closed, rec, rtol=1e-12, atol=1e-12)


def test_dual_full_and_reduced(heat, heat_grid):
    sc = ImexScheme(1)
    E = sc.lhs(heat.A(P), heat_grid.dt).toarray()
    full = solve_dual(heat, sc, P, heat_grid.dt)
    np.testing.assert_allclose(full.x_du, np.linalg.solve(E.T, -heat.C.T), atol=1e-12)
    assert full.r_du_norm <= 1e-12
    V = dual_basis([full.x_du, solve_dual(heat, sc, [0.02], heat_grid.dt).x_du])
    red = solve_dual(heat, sc, P, heat_grid.dt, basis=V)
    assert red.r_du_norm <= 1e-10
    other = solve_dual(heat, sc, [0.09], heat_grid.dt, basis=V)
    assert other.r_du_norm > 1e-8  # not in the span


def test_output_estimate_hand_computation():
    r = np.array([5.0, 1.0, 2.0, 0.5])
    est = output_error_estimate("b", r, r_du_norm=0.1, Einv_norm=0.9, x_du_norm=2.0, rho_bar=1.5)
    factor = 1.5 * 0.9 * 0.1 + 0.5 * 2.0
    np.testing.assert_allclose(est.per_step, [0.0, factor, 2 * factor, 0.5 * factor])
    assert est.mean == pytest.approx(3.5 * factor / 4)
    gap = np.array([9.0, 0.1, 0.2, 0.3])
    a = output_error_estimate("a", r, 0.1, 0.9, 2.0, 1.5, output_gap=gap)
    np.testing.assert_allclose(a.per_step, [0.0, factor + 0.1, 2 * factor + 0.2, 0.5 * factor + 0.3])
    with pytest.raises(ValueError):
        output_error_estimate("a", r, 0.1, 0.9, 2.0, 1.5)
    with pytest.raises(ValueError):
        output_error_estimate("c", r, 0.1, 0.9, 2.0, 1.5)


@given(arrays(np.float64, 6, elements=st.floats(0, 1e6)), st.floats(0, 1e3), st.floats(0, 1e3),
       st.floats(0, 1e3), st.floats(0, 1e3))
def test_estimates_non_negative_and_finite(r, rdu, einv, xdu, rho):
    est = output_error_estimate("b", r, rdu, einv, xdu, rho)
    assert np.all(est.per_step >= 0) and np.all(np.isfinite(est.per_step)) and est.mean >= 0


def test_modified_output_termwise(heat):
    rng = np.random.default_rng(0)
    x_du = rng.standard_normal((heat.dim, 1))
    R = rng.standard_normal((heat.dim, 7))
    y = rng.standard_normal((1, 7))
    got = modified_output(y, x_du, R)
    for k in range(7):
        assert got[0, k] == pytest.approx(y[0, k] - float(np.dot(x_du[:, 0], R[:, k])))
    np.testing.assert_array_equal(modified_output(y, x_du, np.zeros_like(R)), y)


def test_dual_correction_improves_output(heat, heat_grid, heat_blackbox):
    sc = ImexScheme(1)
    D = compute_defect_trajectory(heat_blackbox, heat, sc)
    basis = pod_update(ReducedBasis.empty(heat.dim), heat_blackbox.states, 4)
    red = solve_crom(galerkin_project(heat, basis.V, sc), D, heat_grid, P)
    res = residual_trajectory(heat, red.lifted(), D, sc, P, heat_grid)
    du = solve_dual(heat, sc, P, heat_grid.dt)
    y = heat.C @ heat_blackbox.states
    ybar = modified_output(red.outputs, du, res.R)
    better = np.abs(y - ybar)[0, 1:] <= np.abs(y - red.outputs)[0, 1:]
    assert better.mean() >= 0.9


def test_lipschitz_estimate(heat, small_burgers):
    X = np.random.default_rng(0).standard_normal((heat.dim, 5))
    assert lipschitz_estimate(heat, P, X) == 0.0
    Xb = np.random.default_rng(1).standard_normal((small_burgers.dim, 4))
    L = lipschitz_estimate(small_burgers, [0.1], Xb)
    f = lambda x: small_burgers.f(x, [0.1])
    q = np.linalg.norm(f(Xb[:, 0]) - f(Xb[:, 2])) / np.linalg.norm(Xb[:, 0] - Xb[:, 2])
    assert L >= q * (1 - 1e-10)
