"""Galerkin reduced models and the corrected reduced time march."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import lu_solve

from ..models import ParametricSystem, TimeGrid, Trajectory, _sum_projected
from ..timestepping import ImexScheme, SolverConfig, imex_march, integrate
from .deim import DeimModel

__all__ = ["Rom", "CromSolution", "galerkin_project", "solve_crom", "solve_rom_blackbox"]


@dataclass
class Rom:
    """Projected operators ``V^T A V``, ``V^T B``, ``C V``, ``V^T x0`` (affine in ``p``).

    With a :class:`DeimModel` the nonlinearity is evaluated only at the DEIM
    rows, reading the state entries those rows depend on.
    """

    sys: ParametricSystem
    V: np.ndarray
    scheme: ImexScheme
    A_terms: list
    B_terms: list
    C_hat: np.ndarray
    x0_hat: np.ndarray
    deim: Optional[DeimModel] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.deim is not None:
            rows = self.deim.indices
            deps = self.sys.dependencies(rows)
            # n x m matrix V^T U (P^T U)^{-1}
            self._P = lu_solve(self.deim.lu, (self.V.T @ self.deim.U).T, trans=1).T
            self._deps = deps
            self._V_deps = self.V[deps]

    @property
    def n(self) -> int:
        return self.V.shape[1]

    def A_hat(self, p) -> np.ndarray:
        return _sum_projected(self.A_terms, p)

    def B_hat(self, p) -> np.ndarray:
        if not self.B_terms:
            return np.zeros((self.n, 0))
        return _sum_projected(self.B_terms, p)

    def f_hat(self, xhat: np.ndarray, p) -> np.ndarray:
        """Reduced nonlinearity ``V^T f(V xhat)`` or its DEIM approximation."""
        sys = self.sys
        if sys.is_linear:
            return np.zeros_like(xhat, dtype=float)
        if self.deim is None:
            return self.V.T @ sys.f(self.V @ xhat, p)
        work = np.zeros((sys.dim,) + xhat.shape[1:])
        work[self._deps] = self._V_deps @ xhat
        return self._P @ sys.f_rows(work, p, self.deim.indices)


def galerkin_project(sys: ParametricSystem, V: np.ndarray, scheme: ImexScheme,
                     deim: Optional[DeimModel] = None) -> Rom:
    """Galerkin projection (test basis equals trial basis)."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != sys.dim:
        raise ValueError(f"basis must have {sys.dim} rows")
    A_terms = sys.operator.project(V, V)
    B_terms = sys.input_map.project(V) if sys.n_inputs else []
    return Rom(sys, V, scheme, A_terms, B_terms, sys.C @ V, V.T @ sys.initial_state, deim)


@dataclass
class CromSolution:
    """Reduced trajectory, its outputs and the reduced closure that drove it."""

    trajectory: Trajectory
    V: np.ndarray
    outputs: np.ndarray
    d_hat: Optional[np.ndarray] = None

    @property
    def states(self) -> np.ndarray:
        return self.trajectory.states

    def lifted(self) -> np.ndarray:
        """Full-space approximation ``V x_hat`` for every step."""
        return self.V @ self.trajectory.states


def _reduced_closure(closure, rom: Rom, p, n_t: int) -> Optional[np.ndarray]:
    if closure is None:
        return None
    if hasattr(closure, "projected"):
        D = closure.projected(p, rom.V)
    else:
        D = np.asarray(closure, dtype=float)
        if D.shape[0] == rom.sys.dim:
            D = rom.V.T @ D
    if D.shape != (rom.n, n_t):
        raise ValueError(f"reduced closure must have shape {(rom.n, n_t)}, got {D.shape}")
    D = np.array(D)
    D[:, 0] = 0.0
    return D


def solve_crom(rom: Rom, closure, grid: TimeGrid, p) -> CromSolution:
    """March the corrected ROM in the imposed scheme.

    ``closure`` is a :class:`~defectrom.closure.ClosureModel`, a full
    ``N x N_t`` defect array, a reduced ``n x N_t`` array, or ``None``.
    """
    p = rom.sys.domain.check(p)
    D = _reduced_closure(closure, rom, p, grid.n_t)
    A = rom.A_hat(p)
    BU = rom.B_hat(p) @ rom.sys.u(grid.times) if rom.B_terms else np.zeros((rom.n, grid.n_t))
    X = imex_march(A, BU, rom.x0_hat, lambda x: rom.f_hat(x, p), grid.dt, rom.scheme, D)
    traj = Trajectory(X, grid, p, "crom", info={"closure": D is not None})
    return CromSolution(traj, rom.V, rom.C_hat @ X, D)


def solve_rom_blackbox(rom: Rom, grid: TimeGrid, cfg: SolverConfig, p) -> CromSolution:
    """Integrate the (uncorrected) ROM with the black-box solver."""
    p = rom.sys.domain.check(p)
    A = rom.A_hat(p)
    B = rom.B_hat(p)
    has_input = B.shape[1] > 0
    u = rom.sys.input_signal

    def fun(t, x):
        out = A @ x + rom.f_hat(x, p)
        if has_input:
            out += B @ u(t)
        return out

    X, stats = integrate(fun, rom.x0_hat, grid, cfg, jac=A if rom.sys.is_linear else None)
    traj = Trajectory(X, grid, p, "blackbox", info=stats)
    return CromSolution(traj, rom.V, rom.C_hat @ X)
