import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from defectrom.models import TimeGrid, assemble
from defectrom.reduction import (DeimRankError, ReducedBasis, SnapshotCache, defect_subset, deim_build,
                                 deim_indices, galerkin_project, orthonormal_extend, pod_greedy_ode,
                                 pod_greedy_standard, pod_update, solve_crom, solve_rom_blackbox, split_parameters)
from defectrom.timestepping import ImexScheme, SolverConfig, solve_blackbox, solve_imex


def brute_force_deim(U):
    """Each new row maximizes |det| of the interpolation matrix."""
    idx = []
    for j in range(U.shape[1]):
        best, best_val = None, -1.0
        for i in range(U.shape[0]):
            if i in idx:
                continue
            val = abs(np.linalg.det(U[idx + [i], : j + 1]))
            if val > best_val:
                best, best_val = i, val
        idx.append(best)
    return np.array(idx)


def test_deim_indices_match_determinant_oracle():
    F = np.random.default_rng(0).standard_normal((50, 20))
    model = deim_build(F, m=12)
    np.testing.assert_array_equal(deim_indices(model.U), brute_force_deim(model.U))


def test_deim_interpolation_is_exact_on_its_span_and_rows():
    F = np.random.default_rng(1).standard_normal((30, 8))
    model = deim_build(F, m=5)
    g = model.U @ np.arange(1.0, 6.0)
    np.testing.assert_allclose(model.interpolate(g), g, atol=1e-11)
    h = np.random.default_rng(2).standard_normal(30)
    np.testing.assert_allclose(model.interpolate(h)[model.indices], h[model.indices], atol=1e-11)


def test_deim_rank_and_argument_errors():
    F = np.outer(np.arange(1.0, 11.0), np.ones(4))
    with pytest.raises(DeimRankError):
        deim_build(F, m=2)
    with pytest.raises(ValueError):
        deim_build(F)
    assert deim_build(np.random.default_rng(0).standard_normal((20, 6)), tol=1e-12).m == 6


@given(arrays(np.float64, (15, 4), elements=st.floats(-1, 1)), st.integers(1, 3))
def test_pod_update_orthonormal(X, r_c):
    b = pod_update(ReducedBasis.empty(15), X, r_c)
    b = pod_update(b, X[::-1] + 0.5, r_c)
    if b.n:
        assert b.orthonormality_error() <= 1e-12


def test_pod_first_mode_is_leading_singular_vector():
    X = np.random.default_rng(3).standard_normal((20, 9))
    b = pod_update(ReducedBasis.empty(20), X, 2)
    U = np.linalg.svd(X)[0][:, :2]
    np.testing.assert_allclose(np.abs(U.T @ b.V), np.eye(2), atol=1e-10)
    # update compresses the projection error
    Y = np.random.default_rng(4).standard_normal((20, 5))
    b2 = pod_update(b, Y, 1)
    E = Y - b.V @ (b.V.T @ Y)
    u = np.linalg.svd(E)[0][:, 0]
    assert abs(u @ b2.V[:, 2]) == pytest.approx(1.0, abs=1e-10)


def test_orthonormal_extend_drops_dependent_columns():
    V = np.eye(6)[:, :2]
    W = np.column_stack([V[:, 0] + V[:, 1], np.eye(6)[:, 3]])
    out = orthonormal_extend(V, W)
    assert out.shape == (6, 3)
    np.testing.assert_allclose(out.T @ out, np.eye(3), atol=1e-14)


@pytest.mark.parametrize("order", [1, 2])
def test_full_basis_rom_reproduces_full_imex(small_fhn, order):
    grid = TimeGrid(0.0, 0.3, 0.01)
    p = np.array([0.03, 0.05])
    V = np.linalg.qr(np.random.default_rng(0).standard_normal((small_fhn.dim, small_fhn.dim)))[0]
    rom = galerkin_project(small_fhn, V, ImexScheme(order))
    red = solve_crom(rom, None, grid, p)
    full = solve_imex(small_fhn, grid, ImexScheme(order), p).states
    np.testing.assert_allclose(red.lifted(), full, atol=1e-11)
    np.testing.assert_allclose(red.outputs, small_fhn.C @ full, atol=1e-11)


def test_full_rank_deim_matches_plain_projection(small_burgers):
    grid = TimeGrid(0.0, 0.5, 0.01)
    p = np.array([0.05])
    X = solve_imex(small_burgers, grid, ImexScheme(1), p).states
    V = pod_update(ReducedBasis.empty(small_burgers.dim), X, 6).V
    F = small_burgers.f(X, p)
    m = int(np.sum(np.linalg.svd(F, compute_uv=False) > 1e-12 * np.linalg.norm(F, 2)))
    deim = deim_build(F, m=min(m, small_burgers.dim))
    a = solve_crom(galerkin_project(small_burgers, V, ImexScheme(1)), None, grid, p).outputs
    b = solve_crom(galerkin_project(small_burgers, V, ImexScheme(1), deim), None, grid, p).outputs
    assert np.abs(a - b).max() <= 1e-6


def test_rom_blackbox_with_full_basis_matches_fom(heat):
    grid = TimeGrid(0.0, 0.2, 0.01)
    cfg = SolverConfig()
    rom = galerkin_project(heat, np.eye(heat.dim), ImexScheme(1))
    a = solve_rom_blackbox(rom, grid, cfg, [0.06]).outputs
    b = heat.C @ solve_blackbox(heat, grid, cfg, [0.06]).states
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-9)


def test_split_is_seeded_and_partitions():
    P = np.arange(20.0)[:, None]
    tr, te = split_parameters(P, 0.8, seed=5)
    tr2, te2 = split_parameters(P, 0.8, seed=5)
    np.testing.assert_array_equal(tr, tr2)
    assert len(tr) == 16 and len(te) == 4
    assert sorted(np.r_[tr[:, 0], te[:, 0]].tolist()) == P[:, 0].tolist()
    sub = defect_subset(tr, 5)
    assert {tuple(r) for r in sub} <= {tuple(r) for r in tr}
    assert sub[0, 0] == tr.min() and sub[-1, 0] == tr.max()
    with pytest.raises(ValueError):
        defect_subset(tr, 17)


@pytest.fixture(scope="module")
def small_heat():
    return assemble("heat", n_cells=40)


def _heat_greedy(small_heat, **kw):
    Xi = split_parameters(small_heat.domain.sample(12), 1.0, seed=0)[0]
    grid = TimeGrid(0.0, 0.5, 0.01)
    return pod_greedy_standard(small_heat, Xi, 1e-12, 1, ImexScheme(1), grid, SolverConfig(), max_iter=4,
                               solver="imposed", **kw)


def test_greedy_is_deterministic_and_never_repeats(small_heat):
    a, b = _heat_greedy(small_heat), _heat_greedy(small_heat)
    assert [r.p_star for r in a.records] == [r.p_star for r in b.records]
    np.testing.assert_array_equal(a.epsilons, b.epsilons)
    picks = [tuple(p) for p in a.selected]
    assert len(set(picks)) == len(picks)
    assert a.iterations == 4 and not a.converged
    assert a.basis.n == 4


def test_matched_scheme_greedy_error_decreases(small_heat):
    res = _heat_greedy(small_heat)
    assert res.epsilons[-1] < res.epsilons[0]


def test_alg2_with_exact_overrides_reproduces_blackbox(small_burgers):
    grid = TimeGrid(0.0, 0.5, 0.01)
    cfg = SolverConfig(method="lsoda")
    # coarse mesh: stay at moderate viscosity where central differences are stable
    P = np.logspace(np.log10(0.05), 0.0, 6)[:, None]
    cache = SnapshotCache(small_burgers, grid, cfg)
    res = pod_greedy_ode(small_burgers, P, P[::2], 1e-8, 1e-8, 1e-8, 2, ImexScheme(1), grid, cfg, max_iter=3,
                         cache=cache)
    p0 = P[0]
    assert res.closure.has_override(p0)
    # full-dimensional ROM with the exact defect returns the black-box trajectory
    rom = galerkin_project(small_burgers, np.eye(small_burgers.dim), ImexScheme(1))
    red = solve_crom(rom, res.closure, grid, p0)
    np.testing.assert_allclose(red.lifted(), cache(p0).states, atol=1e-9)
    assert cache.solves == len({tuple(p) for p in itertools.chain(P[::2], res.selected)})
