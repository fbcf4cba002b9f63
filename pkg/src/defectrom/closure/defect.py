"""Defect (closure) snapshots and their two-stage SVD compression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..models import ParametricSystem, TimeGrid, Trajectory
from ..timestepping import ImexScheme

__all__ = [
    "GridMismatchError",
    "DefectTensor",
    "compute_defect_trajectory",
    "build_defect_tensor",
    "two_stage_svd",
    "truncation_rank",
]


class GridMismatchError(ValueError):
    """Snapshots and imposed scheme live on different time grids."""


def compute_defect_trajectory(traj: Trajectory, sys: ParametricSystem, scheme: ImexScheme, p=None,
                              grid: TimeGrid | None = None) -> np.ndarray:
    """Per-step defect of black-box snapshots in the imposed IMEX scheme.

    Column ``k`` is ``E x^k - (A_im x^{k-1} + explicit terms)``, i.e. the
    source that makes the imposed scheme reproduce the snapshots exactly.
    Column 0 is zero.

    Parameters
    ----------
    traj : Trajectory
        Snapshots, typically with provenance ``"blackbox"``.
    sys : ParametricSystem
    scheme : ImexScheme
    p : array_like, optional
        Defaults to ``traj.parameter``.
    grid : TimeGrid, optional
        Grid of the imposed scheme; must coincide with ``traj.grid``.
    """
    if grid is not None and (not np.isclose(grid.dt, traj.grid.dt, rtol=1e-12)
                             or grid.n_t != traj.grid.n_t or grid.t0 != traj.grid.t0):
        raise GridMismatchError(f"snapshot grid {traj.grid} differs from scheme grid {grid}")
    p = traj.parameter if p is None else sys.domain.check(p)
    if p.shape != traj.parameter.shape or not np.allclose(p, traj.parameter, rtol=1e-14, atol=0):
        raise ValueError("parameter does not match the trajectory's parameter")
    X = traj.states
    if X.shape[0] != sys.dim:
        raise ValueError(f"trajectory dimension {X.shape[0]} differs from system dimension {sys.dim}")
    dt = traj.grid.dt
    A = sys.A(p)
    B = sys.B(p)
    U = sys.u(traj.grid.times)
    n_t = X.shape[1]
    D = np.zeros_like(X)
    f_prev2 = None
    f_prev = sys.f(X[:, 0], p)
    for k in range(1, n_t):
        x, x_prev = X[:, k], X[:, k - 1]
        bu = B @ U[:, k]
        if scheme.order == 1 or k == 1:
            lhs = x - dt * (A @ x)
            rhs = x_prev + dt * (f_prev + bu)
        else:
            lhs = x - 0.5 * dt * (A @ x)
            rhs = (x_prev + 0.5 * dt * (A @ x_prev) + dt * (1.5 * f_prev - 0.5 * f_prev2)
                   + 0.5 * dt * (bu + B @ U[:, k - 1]))
        D[:, k] = lhs - rhs
        f_prev2, f_prev = f_prev, sys.f(x, p)
    return D


@dataclass
class DefectTensor:
    """Defect snapshots ``data[:, k, i] = d(t^k, p_i)`` for ``p_i`` in ``params``."""

    data: np.ndarray
    params: np.ndarray
    grid: TimeGrid
    scheme: ImexScheme
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.params = np.atleast_2d(np.asarray(self.params, dtype=float))
        if self.data.ndim != 3:
            raise ValueError("defect data must be an N x N_t x d_s array")
        if self.data.shape[1] != self.grid.n_t:
            raise ValueError("second tensor mode must match the time grid")
        if self.data.shape[2] != self.params.shape[0]:
            raise ValueError("one parameter per frontal slice required")

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def slice(self, i: int) -> np.ndarray:
        return self.data[:, :, i]

    def unfold(self) -> np.ndarray:
        """Mode-1 unfolding ``[D(p_1) | ... | D(p_ds)]``."""
        return self.data.transpose(0, 2, 1).reshape(self.data.shape[0], -1)


def build_defect_tensor(sys: ParametricSystem, trajectories: Sequence[Trajectory], scheme: ImexScheme) -> DefectTensor:
    if not trajectories:
        raise ValueError("no trajectories supplied")
    grid = trajectories[0].grid
    slices = [compute_defect_trajectory(tr, sys, scheme, grid=grid) for tr in trajectories]
    params = np.array([tr.parameter for tr in trajectories])
    return DefectTensor(np.stack(slices, axis=2), params, grid, scheme)


def truncation_rank(s: np.ndarray, tol: float) -> int:
    """Smallest ``l`` with ``sqrt(sum_{i>l} s_i^2 / sum_i s_i^2) <= tol``.

    The left-hand side is the relative Frobenius error of the rank-``l``
    truncated SVD.
    """
    s = np.asarray(s, dtype=float)
    energy = s**2
    total = energy.sum()
    if total == 0.0:
        return 0
    tail = np.sqrt(np.concatenate([np.cumsum(energy[::-1])[::-1], [0.0]]) / total)
    return int(np.argmax(tail <= tol))


def two_stage_svd(tensor: DefectTensor, tol_t: float, tol_p: float) -> tuple:
    """Two-stage SVD of a defect tensor.

    Returns
    -------
    V_d : ndarray, shape (N, n_d)
        Orthonormal spatial basis.
    reduced : ndarray, shape (n_d, N_t, d_s)
        ``tensor.data`` multiplied along mode 1 by ``V_d.T``.
    info : dict
        Stage-1 ranks and singular values of both stages.
    """
    for tol in (tol_t, tol_p):
        if not 0.0 < tol < 1.0:
            raise ValueError("SVD tolerances must lie in (0, 1)")
    if tensor.data.size == 0 or not np.any(tensor.data):
        raise ValueError("defect tensor is empty")
    blocks, ranks, sv_slices = [], [], []
    for i in range(tensor.n_samples):
        U, s, _ = np.linalg.svd(tensor.slice(i), full_matrices=False)
        r = truncation_rank(s, tol_t)
        blocks.append(U[:, :r])
        ranks.append(r)
        sv_slices.append(s)
    R = np.hstack(blocks)
    UR, sR, _ = np.linalg.svd(R, full_matrices=False)
    n_d = max(truncation_rank(sR, tol_p), 1)
    V_d = UR[:, :n_d]
    reduced = np.einsum("nj,nkd->jkd", V_d, tensor.data)
    info = {"stage1_ranks": ranks, "stage1_singular_values": sv_slices, "stage2_singular_values": sR, "n_d": n_d}
    return V_d, reduced, info
