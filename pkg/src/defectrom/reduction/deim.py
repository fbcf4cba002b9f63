"""Discrete empirical interpolation of the nonlinear term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

__all__ = ["DeimModel", "DeimRankError", "deim_indices", "deim_build"]


class DeimRankError(ValueError):
    """Requested more interpolation points than the snapshot rank supports."""


@dataclass
class DeimModel:
    """Basis ``U``, interpolation rows ``indices`` and an LU factor of ``U[indices]``."""

    U: np.ndarray
    indices: np.ndarray
    lu: tuple
    singular_values: np.ndarray

    @property
    def m(self) -> int:
        return self.U.shape[1]

    def coefficients(self, f_rows: np.ndarray) -> np.ndarray:
        """Solve ``(P^T U) c = f_I``; ``f_rows`` may have several columns."""
        return lu_solve(self.lu, f_rows)

    def interpolate(self, f: np.ndarray) -> np.ndarray:
        """``U (P^T U)^{-1} P^T f`` applied to full vectors or matrices."""
        return self.U @ self.coefficients(f[self.indices])


def deim_indices(U: np.ndarray) -> np.ndarray:
    """Standard DEIM greedy row selection."""
    U = np.asarray(U, dtype=float)
    idx = [int(np.argmax(np.abs(U[:, 0])))]
    for j in range(1, U.shape[1]):
        c = np.linalg.solve(U[idx, :j], U[idx, j])
        res = U[:, j] - U[:, :j] @ c
        idx.append(int(np.argmax(np.abs(res))))
    return np.array(idx, dtype=int)


def deim_build(F: np.ndarray, m: int | None = None, tol: float | None = None, rank_tol: float = 1e-12) -> DeimModel:
    """DEIM from nonlinear snapshots ``F`` (columns are ``f`` evaluations).

    Exactly one of ``m`` (number of modes) and ``tol`` (relative Frobenius
    truncation error of the POD) selects the dimension.
    """
    if (m is None) == (tol is None):
        raise ValueError("give exactly one of m and tol")
    F = np.asarray(F, dtype=float)
    U, s, _ = np.linalg.svd(F, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    if tol is not None:
        from ..closure.defect import truncation_rank

        m = max(1, truncation_rank(s, tol))
    if m < 1:
        raise ValueError("m must be positive")
    if m > rank:
        raise DeimRankError(f"m={m} exceeds the numerical rank {rank} of the nonlinear snapshots")
    U = U[:, :m]
    idx = deim_indices(U)
    if len(set(idx.tolist())) != m:
        raise DeimRankError("DEIM selected a repeated index")
    return DeimModel(U, idx, lu_factor(U[idx]), s)
