import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from defectrom.models import TimeGrid
from defectrom.timestepping import (FactorizationError, ImexScheme, IntegrationError, SolverConfig, dopri54,
                                    factorize, integrate, solve_blackbox, solve_imex)


def _rotation(t, y):
    return np.array([-y[1], y[0]])


def test_dopri54_matches_exact_rotation_at_requested_times():
    t = np.linspace(0, 10, 37)
    Y, stats = dopri54(_rotation, np.array([1.0, 0.0]), t, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(Y, np.vstack([np.cos(t), np.sin(t)]), atol=1e-8)
    assert stats["nfev"] > 0


@pytest.mark.parametrize("lam", [-0.5, -20.0, 1.0])
def test_dopri54_scalar_exponential(lam):
    t = np.linspace(0, 1, 11)
    Y, _ = dopri54(lambda t, y: lam * y, np.array([2.0]), t, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(Y[0], 2.0 * np.exp(lam * t), rtol=1e-8, atol=1e-12)


def test_dopri54_error_scales_with_tolerance():
    t = np.linspace(0, 10, 5)
    exact = np.vstack([np.cos(t), np.sin(t)])
    errs = [np.abs(dopri54(_rotation, np.array([1.0, 0.0]), t, rtol=tol, atol=tol)[0] - exact).max()
            for tol in (1e-4, 1e-8)]
    assert errs[1] < errs[0] * 1e-2


def test_dopri54_step_budget_raises_with_time():
    with pytest.raises(IntegrationError) as info:
        dopri54(_rotation, np.array([1.0, 0.0]), np.linspace(0, 100, 3), max_steps=5)
    assert 0.0 <= info.value.last_time < 100


@pytest.mark.parametrize("method", ["dp54", "lsoda", "bdf"])
def test_integrate_methods_agree_with_exact(method):
    A = sp.diags([-1.0, -5.0, -50.0]).tocsr()
    grid = TimeGrid(0.0, 1.0, 0.1)
    y0 = np.ones(3)
    Y, _ = integrate(lambda t, y: A @ y, y0, grid, SolverConfig(method=method), jac_sparsity=A != 0)
    exact = np.exp(np.outer([-1.0, -5.0, -50.0], grid.times))
    np.testing.assert_allclose(Y, exact, atol=1e-7)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="euler")
    with pytest.raises(ValueError):
        SolverConfig(rtol=-1.0)
    tight = SolverConfig().tightened()
    assert tight.rtol < SolverConfig().rtol


def test_blackbox_heat_matches_modal_solution(heat, heat_blackbox):
    # eigen-decomposition of the symmetric operator gives the exact semi-discrete solution
    A = heat.A([0.06]).toarray()
    lam, Q = np.linalg.eigh(A)
    c = Q.T @ heat.x0()
    exact = Q @ (np.exp(np.outer(lam, heat_blackbox.grid.times)) * c[:, None])
    rel = np.abs(heat_blackbox.states - exact).max() / np.abs(exact).max()
    assert rel < 1e-7


def test_imex1_linear_scalar_closed_form():
    grid = TimeGrid(0.0, 1.0, 0.1)
    lam = -3.0
    A = sp.csr_matrix([[lam]])
    from defectrom.timestepping import imex_march

    X = imex_march(A, np.zeros((1, grid.n_t)), np.array([1.0]), lambda x: 0 * x, grid.dt, ImexScheme(1))
    np.testing.assert_allclose(X[0], (1 - grid.dt * lam) ** -np.arange(grid.n_t), rtol=1e-14)


def test_imex2_linear_scalar_closed_form():
    grid = TimeGrid(0.0, 1.0, 0.1)
    lam, dt = -3.0, 0.1
    from defectrom.timestepping import imex_march

    X = imex_march(sp.csr_matrix([[lam]]), np.zeros((1, grid.n_t)), np.array([1.0]), lambda x: 0 * x, dt,
                   ImexScheme(2))
    x1 = 1.0 / (1 - dt * lam)
    g = (1 + dt * lam / 2) / (1 - dt * lam / 2)
    expected = np.r_[1.0, x1 * g ** np.arange(grid.n_t - 1)]
    np.testing.assert_allclose(X[0], expected, rtol=1e-13)


def _hand_imex(sys, grid, p, order, D=None):
    """Direct dense loop written from the scheme definitions."""
    A = sys.A(p).toarray()
    n = sys.dim
    I = np.eye(n)
    dt = grid.dt
    Bu = lambda k: sys.B(p) @ sys.u(grid.times[k])
    f = lambda x: sys.f(x, p)
    X = [sys.x0(p)]
    for k in range(1, grid.n_t):
        extra = np.zeros(n) if D is None else D[:, k]
        if order == 1 or k == 1:
            X.append(np.linalg.solve(I - dt * A, X[-1] + dt * (f(X[-1]) + Bu(k)) + extra))
        else:
            rhs = (I + dt / 2 * A) @ X[-1] + dt * (1.5 * f(X[-1]) - 0.5 * f(X[-2])) + dt / 2 * (Bu(k) + Bu(k - 1))
            X.append(np.linalg.solve(I - dt / 2 * A, rhs + extra))
    return np.column_stack(X)


@pytest.mark.parametrize("order", [1, 2])
def test_solve_imex_matches_hand_loop_on_fhn(small_fhn, order):
    grid = TimeGrid(0.0, 0.5, 0.01)
    p = np.array([0.03, 0.05])
    D = np.random.default_rng(0).standard_normal((small_fhn.dim, grid.n_t)) * 1e-3
    got = solve_imex(small_fhn, grid, ImexScheme(order), p, closure=D).states
    np.testing.assert_allclose(got, _hand_imex(small_fhn, grid, p, order, D), rtol=1e-10, atol=1e-12)


def test_closure_shapes(small_burgers):
    grid = TimeGrid(0.0, 0.1, 0.01)
    p = [0.1]
    D = np.ones((small_burgers.dim, grid.K))
    a = solve_imex(small_burgers, grid, ImexScheme(1), p, closure=D).states
    b = solve_imex(small_burgers, grid, ImexScheme(1), p, closure=np.hstack([np.zeros((small_burgers.dim, 1)), D])).states
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        solve_imex(small_burgers, grid, ImexScheme(1), p, closure=np.ones((3, 3)))


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_factorize_singular_raises():
    with pytest.raises(FactorizationError):
        factorize(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ImexScheme(3)


@given(st.floats(-1e4, -1e-3), st.integers(1, 2))
def test_unconditional_stability_for_decaying_scalar(lam, order):
    from defectrom.timestepping import imex_march

    X = imex_march(sp.csr_matrix([[lam]]), np.zeros((1, 30)), np.array([1.0]), lambda x: 0 * x, 0.1,
                   ImexScheme(order))
    assert np.all(np.abs(X) <= 1.0 + 1e-12)


@given(st.floats(0.01, 0.1))
def test_heat_blackbox_output_non_negative_and_decaying(mu):
    from defectrom.models import assemble

    s = assemble("heat", n_cells=32)
    grid = TimeGrid(0.0, 0.5, 0.05)
    tr = solve_blackbox(s, grid, SolverConfig(rtol=1e-6, atol=1e-9), [mu])
    norms = np.linalg.norm(tr.states, axis=0)
    assert np.all(np.diff(norms) <= 1e-9)
