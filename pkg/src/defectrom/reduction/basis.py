"""Orthonormal reduced bases and POD enrichment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ReducedBasis", "orthonormal_extend", "pod_update"]

log = logging.getLogger(__name__)


@dataclass
class ReducedBasis:
    """Column-orthonormal ``V`` together with the number of columns added per update."""

    V: np.ndarray
    history: list = field(default_factory=list)

    @classmethod
    def empty(cls, dim: int) -> "ReducedBasis":
        return cls(np.zeros((dim, 0)), [])

    @property
    def n(self) -> int:
        return self.V.shape[1]

    @property
    def dim(self) -> int:
        return self.V.shape[0]

    def orthonormality_error(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.max(np.abs(self.V.T @ self.V - np.eye(self.n))))


def orthonormal_extend(V: np.ndarray, W: np.ndarray, drop_tol: float = 1e-10) -> np.ndarray:
    """Append the columns of ``W`` to ``V`` by modified Gram-Schmidt with one re-pass.

    Columns whose norm falls below ``drop_tol`` times their original norm
    after orthogonalization are discarded.
    """
    cols = [V[:, j] for j in range(V.shape[1])]
    for j in range(W.shape[1]):
        w = np.array(W[:, j], dtype=float)
        w0 = np.linalg.norm(w)
        if w0 == 0.0:
            continue
        for _ in range(2):
            for q in cols:
                w -= (q @ w) * q
        nw = np.linalg.norm(w)
        if nw <= drop_tol * w0:
            continue
        cols.append(w / nw)
    if not cols:
        return np.zeros((V.shape[0], 0))
    return np.column_stack(cols)


def pod_update(basis: ReducedBasis, X: np.ndarray, r_c: int, rank_tol: float = 1e-10) -> ReducedBasis:
    """Enrich ``basis`` with the ``r_c`` dominant POD modes of the deflated snapshots.

    Parameters
    ----------
    basis : ReducedBasis
    X : ndarray, shape (N, N_t)
        Snapshots at the greedy parameter.
    r_c : int
        Requested number of new columns.
    rank_tol : float
        Singular values of the deflated matrix below ``rank_tol * ||X||_2``
        are treated as zero; fewer columns are then added.
    """
    if r_c < 1:
        raise ValueError("r_c must be positive")
    X = np.asarray(X, dtype=float)
    V = basis.V
    Xbar = X - V @ (V.T @ X) if V.shape[1] else X.copy()
    U, s, _ = np.linalg.svd(Xbar, full_matrices=False)
    scale = np.linalg.norm(X, 2)
    rank = int(np.sum(s > rank_tol * scale)) if scale > 0 else 0
    take = min(r_c, rank)
    if take < r_c:
        log.info("deflated snapshots have numerical rank %d < r_c=%d; adding %d column(s)", rank, r_c, take)
    Vnew = orthonormal_extend(V, U[:, :take]) if take else V.copy()
    return ReducedBasis(Vnew, basis.history + [Vnew.shape[1] - V.shape[1]])
