"""POD-Greedy drivers: the standard loop and the closure-corrected loop for black-box solvers."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..closure.defect import build_defect_tensor, compute_defect_trajectory
from ..closure.fnn import FnnHyper
from ..closure.model import ClosureModel, closure_update, train_closure
from ..estimator import (ErrorEstimate, auxiliary_residual, dual_basis, inverse_norm, output_error_estimate,
                         residual_trajectory, rho_from_norms, solve_dual, state_error_bound, state_error_constants)
from ..models import ParametricSystem, TimeGrid, Trajectory
from ..timestepping import ImexScheme, SolverConfig, factorize, solve_blackbox, solve_imex
from .basis import ReducedBasis, pod_update
from .deim import DeimModel, deim_build
from .rom import CromSolution, Rom, galerkin_project, solve_crom, solve_rom_blackbox

__all__ = [
    "GreedyRecord",
    "GreedyResult",
    "SnapshotCache",
    "split_parameters",
    "defect_subset",
    "pod_greedy_standard",
    "pod_greedy_ode",
    "estimate_parameters",
]

log = logging.getLogger(__name__)


@dataclass
class GreedyRecord:
    iteration: int
    p_star: list
    epsilon: float
    n: int
    n_deim: int
    rho_bar: float
    wall_time: float


@dataclass
class GreedyResult:
    """Outcome of a greedy run; ``records[i].epsilon`` is stored verbatim."""

    basis: ReducedBasis
    records: list
    converged: bool
    algorithm: int
    scheme: ImexScheme
    grid: TimeGrid
    closure: Optional[ClosureModel] = None
    rom: Optional[Rom] = None
    deim: Optional[DeimModel] = None
    dual_V: Optional[np.ndarray] = None
    rho_bar: float = 1.0
    selected: list = field(default_factory=list)
    training_estimates: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([r.epsilon for r in self.records])

    @property
    def iterations(self) -> int:
        return len(self.records)


class SnapshotCache:
    """Black-box trajectories keyed by parameter, shared between runs."""

    def __init__(self, sys: ParametricSystem, grid: TimeGrid, cfg: SolverConfig):
        self.sys, self.grid, self.cfg = sys, grid, cfg
        self._store: dict = {}
        self.solves = 0

    def __call__(self, p) -> Trajectory:
        key = tuple(float(v) for v in np.atleast_1d(p))
        if key not in self._store:
            self._store[key] = solve_blackbox(self.sys, self.grid, self.cfg, np.array(key))
            self.solves += 1
        return self._store[key]


def split_parameters(params, train_fraction: float, seed: int = 0) -> tuple:
    """Seeded shuffle followed by a ``train_fraction`` split; the training order stays shuffled."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    perm = np.random.default_rng(seed).permutation(params.shape[0])
    n_train = int(round(train_fraction * params.shape[0]))
    return params[perm[:n_train]], params[perm[n_train:]]


def defect_subset(train, d_s: int) -> np.ndarray:
    """``d_s`` evenly spaced entries of the lexicographically sorted training set."""
    train = np.atleast_2d(np.asarray(train, dtype=float))
    if not 1 <= d_s <= train.shape[0]:
        raise ValueError(f"d_s={d_s} must lie in [1, {train.shape[0]}]")
    order = np.lexsort(train.T[::-1])
    idx = np.round(np.linspace(0, train.shape[0] - 1, d_s)).astype(int)
    return train[order[idx]]


# shared machinery ============================================================


class _Estimator:
    """Per-parameter pieces of the output estimate that do not change between iterations."""

    def __init__(self, sys, scheme, grid, norm_iters):
        self.sys, self.scheme, self.grid, self.norm_iters = sys, scheme, grid, norm_iters
        self._einv: dict = {}
        self._E: dict = {}

    def E(self, p):
        key = tuple(p)
        if key not in self._E:
            self._E[key] = self.scheme.lhs(self.sys.A(p), self.grid.dt, 2)
        return self._E[key]

    def constants(self, p, L_f):
        key = (tuple(p), L_f)
        if key not in self._einv:
            self._einv[key] = state_error_constants(self.sys, self.scheme, p, self.grid.dt, L_f, self.norm_iters)
        return self._einv[key]

    def einv(self, p) -> float:
        key = tuple(p)
        if key not in self._einv:
            self._einv[key] = inverse_norm(self.E(p), self.norm_iters)
        return self._einv[key]


def _solve_reduced(rom, closure, grid, cfg, p, alg):
    if alg == 2 or cfg is None:
        return solve_crom(rom, closure, grid, p)
    return solve_rom_blackbox(rom, grid, cfg, p)


def _greedy(sys, Xi, tol, r_c, scheme, grid, cfg, alg, closure, update_defect, max_iter, deim_increment,
            cache, norm_iters, use_deim, rom_solver, fom_solver, estimator="dual", lipschitz=0.0):
    Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
    for p in Xi:
        sys.domain.check(p)
    est = _Estimator(sys, scheme, grid, norm_iters)
    basis = ReducedBasis.empty(sys.dim)
    selected: list = []
    duals: list = []
    F_snap: list = []
    records: list = []
    deim = None
    rom = None
    rho = 1.0
    estimates = None
    converged = False
    i_star = 0
    t_start = time.perf_counter()

    def fom(p):
        if fom_solver == "imposed":
            return solve_imex(sys, grid, scheme, p)
        return cache(p)

    for it in range(1, max_iter + 1):
        p_star = Xi[i_star]
        selected.append(i_star)
        X = fom(p_star)
        if alg == 2 and update_defect:
            closure_update(closure, p_star, compute_defect_trajectory(X, sys, scheme))
        basis = pod_update(basis, X.states, r_c)
        if use_deim and not sys.is_linear:
            F_snap.append(sys.f(X.states, p_star))
            F = np.hstack(F_snap)
            m_target = (deim.m if deim is not None else 0) + deim_increment
            rank = np.linalg.matrix_rank(F, tol=1e-12 * np.linalg.norm(F, 2))
            deim = deim_build(F, m=min(m_target, rank))
        rom = galerkin_project(sys, basis.V, scheme, deim)
        duals.append(solve_dual(sys, scheme, p_star, grid.dt, E=est.E(p_star)).x_du)
        V_du = dual_basis(duals)

        rom_cfg = None if rom_solver == "imposed" else cfg
        cl = closure if alg == 2 else None
        if estimator == "dual":
            # calibration at the greedy parameter
            if alg == 2:
                x_ref = solve_imex(sys, grid, scheme, p_star, closure.trajectory(p_star))
            else:
                x_ref = X
            red = _solve_reduced(rom, closure, grid, rom_cfg, p_star, alg)
            aux = auxiliary_residual(sys, x_ref, red, cl, scheme, p_star, grid)
            res = residual_trajectory(sys, red.lifted(), cl, scheme, p_star, grid)
            # without a closure the standard estimator assumes the snapshots satisfy
            # the imposed scheme, i.e. auxiliary residual = E (x - x_tilde)
            aux_norms = aux.norms if alg == 2 else np.linalg.norm(aux.identity, axis=0)
            rho = rho_from_norms(aux_norms, res.norms)[0]
            estimates = np.array([
                _estimate_one(sys, rom, cl, scheme, grid, rom_cfg, p, V_du, rho, est, alg, deim).mean for p in Xi
            ])
        else:
            rho = float("nan")
            estimates = np.array([
                _state_estimate(sys, rom, scheme, grid, rom_cfg, p, est, lipschitz).mean for p in Xi
            ])
        candidates = np.setdiff1d(np.arange(len(Xi)), selected)
        if candidates.size:
            i_star = int(candidates[np.argmax(estimates[candidates])])
            eps = float(estimates[i_star])
        else:
            eps = float(estimates.max())
        records.append(GreedyRecord(it, Xi[i_star].tolist(), eps, basis.n, deim.m if deim else 0, rho,
                                    time.perf_counter() - t_start))
        log.info("greedy it=%d n=%d eps=%.3e rho=%.4f", it, basis.n, eps, rho)
        if eps <= tol:
            converged = True
            break
        if not candidates.size:
            break

    return GreedyResult(basis, records, converged, alg, scheme, grid, closure if alg == 2 else None, rom, deim,
                        V_du, rho, [Xi[i].tolist() for i in selected], estimates,
                        info={"snapshot_solves": cache.solves if cache is not None else None, "estimator": estimator})


def _estimate_one(sys, rom, closure, scheme, grid, cfg, p, V_du, rho, est, alg, deim) -> ErrorEstimate:
    red = _solve_reduced(rom, closure, grid, cfg, p, alg)
    res = residual_trajectory(sys, red.lifted(), closure, scheme, p, grid)
    du = solve_dual(sys, scheme, p, grid.dt, basis=V_du, E=est.E(p))
    return output_error_estimate("b", res.norms, du.r_du_norm, est.einv(p), du.x_du_norm, rho)


def _state_estimate(sys, rom, scheme, grid, cfg, p, est, lipschitz) -> ErrorEstimate:
    """Output bound ``||C|| Delta^k`` from the residual-based state bound, closure-free residual."""
    red = _solve_reduced(rom, None, grid, cfg, p, 1)
    X_tilde = red.lifted()
    res = residual_trajectory(sys, X_tilde, None, scheme, p, grid)
    zeta, xi = est.constants(p, lipschitz)
    e0 = float(np.linalg.norm(sys.x0(p) - X_tilde[:, 0]))
    per = np.linalg.norm(sys.C, 2) * state_error_bound(res.norms, zeta, xi, e0)
    return ErrorEstimate(per, float(per.sum() / per.size), float("nan"), "state", {"zeta": zeta, "xi": xi})


def estimate_parameters(result: GreedyResult, sys: ParametricSystem, params, cfg: Optional[SolverConfig] = None,
                        variant: str = "b", fom_cache: Optional[SnapshotCache] = None, norm_iters: int = 20) -> list:
    """Output error estimates of the final ROM at ``params``.

    Variant ``a`` also needs the ROM integrated by the black-box solver
    (``cfg``) to form the output gap term.
    """
    est = _Estimator(sys, result.scheme, result.grid, norm_iters)
    out = []
    for p in np.atleast_2d(np.asarray(params, dtype=float)):
        closure = result.closure
        red = solve_crom(result.rom, closure, result.grid, p) if result.algorithm == 2 else \
            solve_rom_blackbox(result.rom, result.grid, cfg, p)
        res = residual_trajectory(sys, red.lifted(), closure, result.scheme, p, result.grid)
        du = solve_dual(sys, result.scheme, p, result.grid.dt, basis=result.dual_V, E=est.E(p))
        gap = None
        if variant == "a":
            if cfg is None:
                raise ValueError("variant 'a' needs a solver configuration for the ROM")
            y_hat = solve_rom_blackbox(result.rom, result.grid, cfg, p).outputs
            y_bar = red.outputs - du.x_du.T @ res.R
            gap = np.linalg.norm(y_bar - y_hat, axis=0)
        out.append(output_error_estimate(variant, res.norms, du.r_du_norm, est.einv(p), du.x_du_norm,
                                         result.rho_bar, gap))
    return out


# public drivers ==============================================================


def pod_greedy_standard(sys: ParametricSystem, Xi, tol: float, r_c: int, scheme: ImexScheme, grid: TimeGrid,
                        cfg: SolverConfig = SolverConfig(), max_iter: int = 30, solver: str = "blackbox",
                        deim_increment: Optional[int] = None, use_deim: bool = True,
                        cache: Optional[SnapshotCache] = None, norm_iters: int = 20, estimator: str = "state",
                        lipschitz: float = 0.0) -> GreedyResult:
    """Standard POD-Greedy with a closure-free residual in the imposed scheme.

    ``solver="blackbox"`` takes FOM and ROM trajectories from the black-box
    integrator while the residual uses ``scheme``, the mismatched setting.
    ``solver="imposed"`` integrates both with ``scheme`` (matched setting).
    The first training parameter is the initial greedy parameter.

    ``estimator="state"`` (default) uses the output bound ``||C|| Delta^k``
    built from the residual-based state bound with Lipschitz constant
    ``lipschitz``; ``estimator="dual"`` uses the dual-weighted estimate with
    zero closure.
    """
    if solver not in ("blackbox", "imposed"):
        raise ValueError("solver must be 'blackbox' or 'imposed'")
    if estimator not in ("state", "dual"):
        raise ValueError("estimator must be 'state' or 'dual'")
    cache = cache or SnapshotCache(sys, grid, cfg)
    return _greedy(sys, Xi, tol, r_c, scheme, grid, cfg, 1, None, False, max_iter, deim_increment or 2 * r_c,
                   cache, norm_iters, use_deim, solver, solver, estimator, lipschitz)


def pod_greedy_ode(sys: ParametricSystem, Xi, Xi_defect, tol: float, tol_svd_t: float, tol_svd_p: float, r_c: int,
                   scheme: ImexScheme, grid: TimeGrid, cfg: SolverConfig = SolverConfig(), surrogate: str = "rbf",
                   update_defect: bool = True, max_iter: int = 30, hyper: FnnHyper = FnnHyper(),
                   deim_increment: Optional[int] = None, use_deim: bool = True,
                   cache: Optional[SnapshotCache] = None, norm_iters: int = 20,
                   closure: Optional[ClosureModel] = None) -> GreedyResult:
    """POD-Greedy for black-box snapshots with a learned defect closure.

    The closure is trained on black-box snapshots at ``Xi_defect`` (reused
    from ``cache`` when available) unless a pre-trained ``closure`` is
    given; overrides registered during the run are added to that object.
    """
    Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
    Xi_defect = np.atleast_2d(np.asarray(Xi_defect, dtype=float))
    keys = {tuple(p) for p in Xi}
    if any(tuple(p) not in keys for p in Xi_defect):
        raise ValueError("Xi_defect must be a subset of Xi")
    cache = cache or SnapshotCache(sys, grid, cfg)
    if closure is None:
        closure = train_defect_closure(sys, Xi_defect, scheme, tol_svd_t, tol_svd_p, surrogate, cache, hyper)
    return _greedy(sys, Xi, tol, r_c, scheme, grid, cfg, 2, closure, update_defect, max_iter,
                   deim_increment or 2 * r_c, cache, norm_iters, use_deim, "imposed", "blackbox")


def train_defect_closure(sys, Xi_defect, scheme, tol_svd_t, tol_svd_p, surrogate, cache: SnapshotCache,
                         hyper: FnnHyper = FnnHyper()) -> ClosureModel:
    """Black-box solves at ``Xi_defect``, defect tensor, two-stage SVD and surrogate fit."""
    trajs = [cache(p) for p in np.atleast_2d(Xi_defect)]
    tensor = build_defect_tensor(sys, trajs, scheme)
    try:
        return train_closure(tensor, sys.domain, tol_svd_t, tol_svd_p, surrogate, hyper)
    except Exception as exc:
        raise RuntimeError(f"closure training failed ({surrogate}, d_s={tensor.n_samples}): {exc}") from exc
