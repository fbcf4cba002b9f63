import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from defectrom.closure import (ClosureModel, DefectTensor, FnnHyper, GridMismatchError, RbfConditioningWarning,
                               build_defect_tensor, closure_eval, closure_update, compute_defect_trajectory,
                               fnn_eval, fnn_eval_all, fnn_train, rbf_eval, rbf_eval_all, rbf_fit, train_closure,
                               truncation_rank, two_stage_svd)
from defectrom.closure.fnn import _shapes, forward, loss_and_grad
from defectrom.models import ParameterDomain, TimeGrid, Trajectory
from defectrom.timestepping import ImexScheme, solve_imex

GRID = TimeGrid(0.0, 0.2, 0.01)


def _random_traj(sys, p, seed=0, grid=GRID):
    rng = np.random.default_rng(seed)
    X = 0.1 * rng.standard_normal((sys.dim, grid.n_t))
    X[:, 0] = sys.x0(p)
    return Trajectory(X, grid, p, "blackbox")


# defect --------------------------------------------------------------------


def test_imex1_defect_matches_hand_formula(small_burgers):
    p = np.array([0.1])
    tr = _random_traj(small_burgers, p)
    A = small_burgers.A(p).toarray()
    dt = GRID.dt
    X = tr.states
    D = compute_defect_trajectory(tr, small_burgers, ImexScheme(1))
    assert np.all(D[:, 0] == 0)
    for k in (1, 7, GRID.K):
        expected = (np.eye(small_burgers.dim) - dt * A) @ X[:, k] - X[:, k - 1] - dt * small_burgers.f(X[:, k - 1], p)
        np.testing.assert_allclose(D[:, k], expected, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("order", [1, 2])
def test_corrected_full_model_recovers_any_trajectory(small_fhn, order):
    p = np.array([0.02, 0.04])
    tr = _random_traj(small_fhn, p, seed=order)
    D = compute_defect_trajectory(tr, small_fhn, ImexScheme(order))
    rec = solve_imex(small_fhn, GRID, ImexScheme(order), p, closure=D).states
    assert np.abs(rec - tr.states).max() <= 1e-10 * np.abs(tr.states).max()


@given(arrays(np.float64, (12, 6), elements=st.floats(-1, 1)), st.integers(1, 2))
def test_recovery_property_heat_small(X, order):
    from defectrom.models import assemble

    s = assemble("heat", n_cells=13)
    grid = TimeGrid(0.0, 0.05, 0.01)
    X = X.copy()
    X[:, 0] = s.x0()
    tr = Trajectory(X, grid, [0.05], "blackbox")
    D = compute_defect_trajectory(tr, s, ImexScheme(order))
    rec = solve_imex(s, grid, ImexScheme(order), [0.05], closure=D).states
    np.testing.assert_allclose(rec, X, atol=1e-9 * max(1.0, np.abs(X).max()))


def test_defect_grid_mismatch(small_burgers):
    tr = _random_traj(small_burgers, [0.1])
    with pytest.raises(GridMismatchError):
        compute_defect_trajectory(tr, small_burgers, ImexScheme(1), grid=TimeGrid(0.0, 0.2, 0.02))


# truncation ------------------------------------------------------------------


def test_truncation_rank_hand_values():
    s = np.array([1.0, 0.1, 0.01])
    assert truncation_rank(s, 0.05) == 2
    assert truncation_rank(s, 0.2) == 1
    assert truncation_rank(s, 1e-6) == 3
    assert truncation_rank(np.zeros(4), 1e-3) == 0


@given(arrays(np.float64, 8, elements=st.floats(0, 10)), st.floats(1e-6, 0.5), st.floats(1e-6, 0.5))
def test_truncation_rank_monotone_in_tolerance(s, t1, t2):
    s = np.sort(s)[::-1]
    lo, hi = sorted((t1, t2))
    assert truncation_rank(s, hi) <= truncation_rank(s, lo)
    ell = truncation_rank(s, lo)
    total = np.sum(s**2)
    if total > 0:
        assert np.sqrt(np.sum(s[ell:] ** 2) / total) <= lo + 1e-12


def test_two_stage_svd_recovers_low_rank_subspace():
    rng = np.random.default_rng(0)
    n, n_t, d_s = 40, 15, 5
    Q = np.linalg.qr(rng.standard_normal((n, 3)))[0]
    data = np.stack([Q @ rng.standard_normal((3, n_t)) for _ in range(d_s)], axis=2)
    tensor = DefectTensor(data, np.linspace(0.1, 0.9, d_s)[:, None], TimeGrid(0, 1.4, 0.1), ImexScheme(1))
    V_d, reduced, info = two_stage_svd(tensor, 1e-10, 1e-10)
    assert V_d.shape[1] == 3 == info["n_d"]
    np.testing.assert_allclose(V_d.T @ V_d, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.einsum("nj,jki->nki", V_d, reduced), data, atol=1e-10)
    # span agreement via principal angles
    assert np.linalg.svd(Q.T @ V_d, compute_uv=False).min() > 1 - 1e-10


# RBF -------------------------------------------------------------------------

DOM2 = ParameterDomain((0.0, 0.0), (1.0, 2.0), ("linear", "linear"), ("a", "b"))


def test_rbf_is_exact_at_nodes_and_reproduces_affine_data():
    rng = np.random.default_rng(2)
    P = np.column_stack([rng.uniform(0, 1, 9), rng.uniform(0, 2, 9)])
    affine = 0.3 + 2.0 * P[:, 0] - 0.7 * P[:, 1]
    reduced = np.stack([np.vstack([affine, affine**2])] * 3, axis=1)  # (n_d=2, n_t=3, d_s=9)
    model = rbf_fit(reduced, P, DOM2)
    for i, p in enumerate(P):
        np.testing.assert_allclose(rbf_eval(model, 1, p), reduced[:, 1, i], atol=1e-10)
    q = np.array([0.37, 1.21])
    np.testing.assert_allclose(rbf_eval_all(model, q)[0], 0.3 + 2.0 * q[0] - 0.7 * q[1], atol=1e-10)


@given(st.integers(4, 15), st.integers(0, 10_000))
def test_rbf_node_exactness_property(n, seed):
    rng = np.random.default_rng(seed)
    P = np.column_stack([rng.uniform(0, 1, n), rng.uniform(0, 2, n)])
    if np.min(np.linalg.norm(P[:, None] - P[None], axis=2) + np.eye(n)) < 1e-3:
        return
    reduced = rng.standard_normal((2, 4, n))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RbfConditioningWarning)
        model = rbf_fit(reduced, P, DOM2)
    err = max(np.abs(rbf_eval_all(model, p) - reduced[:, :, i]).max() for i, p in enumerate(P))
    assert err <= 1e-8 * max(1.0, model.cond * 1e-8)


def test_rbf_rejects_duplicates_and_flags_extrapolation():
    P = np.array([[0.1, 0.1], [0.9, 0.1], [0.5, 1.9], [0.1, 0.1]])
    with pytest.raises(ValueError):
        rbf_fit(np.zeros((1, 2, 4)), P, DOM2)
    P = np.array([[0.1, 0.1], [0.9, 0.1], [0.5, 1.9], [0.5, 0.5]])
    model = rbf_fit(np.ones((1, 2, 4)), P, DOM2)
    _, outside = rbf_eval(model, 0, [0.95, 1.95], with_flag=True)
    _, inside = rbf_eval(model, 0, [0.5, 0.6], with_flag=True)
    assert outside and not inside


# FNN -------------------------------------------------------------------------


def test_fnn_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    shapes = _shapes(3, (5, 7), 2)
    theta = 0.5 * rng.standard_normal(sum(a * b + b for a, b in shapes))
    Z, Y = rng.uniform(size=(11, 3)), rng.uniform(-0.5, 0.5, size=(11, 2))
    _, g = loss_and_grad(theta, shapes, Z, Y)
    h = 1e-6
    fd = np.array([(loss_and_grad(theta + h * e, shapes, Z, Y)[0] - loss_and_grad(theta - h * e, shapes, Z, Y)[0])
                   / (2 * h) for e in np.eye(theta.size)])
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5


def test_fnn_loss_definition():
    shapes = _shapes(2, (3,), 1)
    theta = np.linspace(-1, 1, sum(a * b + b for a, b in shapes))
    Z, Y = np.array([[0.1, 0.2], [0.3, 0.9]]), np.array([[0.5], [-0.2]])
    out = forward(theta, shapes, Z)
    loss, _ = loss_and_grad(theta, shapes, Z, Y)
    assert loss == pytest.approx(np.sum((out - Y) ** 2) / (2 * 2))


def test_fnn_zero_targets_train_to_zero():
    times = np.linspace(0, 1, 11)
    P = np.array([[0.2, 0.5], [0.8, 1.5], [0.5, 1.0]])
    model = fnn_train(np.zeros((2, 11, 3)), P, times, FnnHyper(hidden=(8, 8), epochs=400, seed=1), DOM2)
    Z = model.inputs(times, DOM2.normalize(P[0]))
    assert np.abs(model.predict_normalized(Z)).max() <= 1e-2
    assert np.abs(fnn_eval_all(model, P[1])).max() <= 1e-2


def test_fnn_is_seed_deterministic_and_fits_smooth_data():
    times = np.linspace(0, 1, 9)
    P = np.array([[0.1, 0.2], [0.4, 1.0], [0.9, 1.8], [0.6, 0.4]])
    target = np.stack([np.outer(np.sin(times), p) .T for p in P], axis=2)  # (2, 9, 4)
    hyper = FnnHyper(hidden=(16, 16), epochs=600, learning_rate=0.01, seed=3)
    a = fnn_train(target, P, times, hyper, DOM2)
    b = fnn_train(target, P, times, hyper, DOM2)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.final_loss < 0.1 * a.loss_history[0]
    assert fnn_eval(a, times[3], P[1]).shape == (2,)


# closure model ---------------------------------------------------------------


def test_closure_overrides_and_copy(small_burgers):
    trajs = [_random_traj(small_burgers, [mu], seed=i) for i, mu in enumerate((0.01, 0.05, 0.2, 0.6))]
    tensor = build_defect_tensor(small_burgers, trajs, ImexScheme(1))
    model = train_closure(tensor, small_burgers.domain, 1e-8, 1e-8)
    p = np.array([0.1])
    assert np.all(model.trajectory(p)[:, 0] == 0)
    exact = np.ones((small_burgers.dim, GRID.n_t))
    twin = model.copy()
    closure_update(model, p, exact)
    np.testing.assert_array_equal(closure_eval(model, 5, p), 1.0)
    assert np.all(closure_eval(model, 0, p) == 0)
    assert not twin.has_override(p)
    with pytest.raises(ValueError):
        exact2 = model.trajectory(p)
        exact2[0, 0] = 1.0  # stored overrides are read-only
    with pytest.raises(ValueError):
        closure_update(model, p, np.ones((3, 3)))
    with pytest.raises(IndexError):
        closure_eval(model, GRID.n_t, p)
    # surrogate reproduces the training slices through the compressed basis
    for i, tr in enumerate(trajs):
        Dk = tensor.slice(i)
        np.testing.assert_allclose(model.trajectory(tr.parameter), Dk, atol=1e-8 * np.abs(Dk).max())


def test_unknown_surrogate_rejected(small_burgers):
    trajs = [_random_traj(small_burgers, [mu], seed=i) for i, mu in enumerate((0.01, 0.05, 0.2))]
    tensor = build_defect_tensor(small_burgers, trajs, ImexScheme(1))
    with pytest.raises(ValueError):
        train_closure(tensor, small_burgers.domain, 1e-4, 1e-4, surrogate="gp")
