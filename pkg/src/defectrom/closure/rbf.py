"""Polyharmonic cubic RBF interpolation of reduced defect coefficients over parameter space."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.spatial import Delaunay, QhullError

from ..models import ParameterDomain

__all__ = ["RbfInterpolant", "RbfConditioningError", "RbfConditioningWarning", "rbf_fit", "rbf_eval", "rbf_eval_all",
           "cubic_kernel"]

COND_WARN = 1e12


class RbfConditioningError(np.linalg.LinAlgError):
    """The RBF saddle-point system is singular; ``cond`` holds the estimate."""

    def __init__(self, message: str, cond: float):
        super().__init__(f"{message} (condition number estimate {cond:.3e})")
        self.cond = cond


class RbfConditioningWarning(RuntimeWarning):
    pass


def cubic_kernel(r):
    return np.asarray(r, dtype=float) ** 3


@dataclass
class RbfInterpolant:
    """Cubic RBF interpolant with a linear tail, shared over all ``(j, k)`` coefficients.

    ``weights[:, k * n_d + j]`` holds the ``d_s`` kernel weights followed by
    the ``p + 1`` tail coefficients of coordinate ``j`` at time index ``k``.
    """

    centers: np.ndarray
    weights: np.ndarray
    n_d: int
    n_t: int
    domain: ParameterDomain
    cond: float
    info: dict = field(default_factory=dict)

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    def features(self, p) -> np.ndarray:
        """Row ``[Phi(|q - c_1|), ..., Phi(|q - c_ds|), 1, q]`` for normalized ``q``."""
        q = self.domain.normalize(np.atleast_1d(np.asarray(p, dtype=float)))
        r = np.linalg.norm(self.centers - q, axis=1)
        return np.concatenate([cubic_kernel(r), [1.0], q])

    def extrapolates(self, p) -> bool:
        q = self.domain.normalize(np.atleast_1d(np.asarray(p, dtype=float)))
        hull = self.info.get("hull")
        if hull is not None:
            return bool(hull.find_simplex(q[None, :], tol=1e-12)[0] < 0)
        lo, hi = self.centers.min(axis=0), self.centers.max(axis=0)
        return bool(np.any(q < lo - 1e-12) or np.any(q > hi + 1e-12))


def _hull(centers: np.ndarray) -> Optional[Delaunay]:
    if centers.shape[1] < 2:
        return None
    try:
        return Delaunay(centers)
    except (QhullError, ValueError):
        return None


def rbf_fit(reduced: np.ndarray, params, domain: ParameterDomain) -> RbfInterpolant:
    """Fit all ``n_d * N_t`` interpolants with one factorization.

    Parameters
    ----------
    reduced : ndarray, shape (n_d, N_t, d_s)
        Reduced defect tensor.
    params : array_like, shape (d_s, p)
        Interpolation nodes (unnormalized).
    domain : ParameterDomain
        Supplies the per-axis normalization.
    """
    reduced = np.asarray(reduced, dtype=float)
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if params.shape[1] != domain.dim and params.shape[0] == domain.dim:
        params = params.T
    n_d, n_t, d_s = reduced.shape
    dim = domain.dim
    if params.shape != (d_s, dim):
        raise ValueError(f"expected {d_s} parameters of length {dim}, got shape {params.shape}")
    if d_s < dim + 2:
        raise ValueError(f"need at least {dim + 2} centers for a linear tail, got {d_s}")
    centers = domain.normalize(params)
    dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    i, j = np.triu_indices(d_s, 1)
    if np.any(dist[i, j] < 1e-12):
        raise ValueError("duplicate RBF centers")

    P = np.hstack([np.ones((d_s, 1)), centers])
    M = np.zeros((d_s + dim + 1, d_s + dim + 1))
    M[:d_s, :d_s] = cubic_kernel(dist)
    M[:d_s, d_s:] = P
    M[d_s:, :d_s] = P.T
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise RbfConditioningError("RBF system is numerically singular", cond)
    if cond > COND_WARN:
        warnings.warn(f"RBF system is ill-conditioned (cond={cond:.2e})", RbfConditioningWarning, stacklevel=2)

    # rhs column k * n_d + j holds coordinate j at time k
    Y = reduced.transpose(2, 1, 0).reshape(d_s, n_t * n_d)
    rhs = np.vstack([Y, np.zeros((dim + 1, Y.shape[1]))])
    Q, R, piv = qr(M, pivoting=True)
    W = np.empty_like(rhs)
    W[piv] = solve_triangular(R, Q.T @ rhs)
    return RbfInterpolant(centers, W, n_d, n_t, domain, cond, info={"hull": _hull(centers)})


def rbf_eval(model: RbfInterpolant, k: int, p, with_flag: bool = False):
    """Reduced defect ``d_hat(t^k, p)``; ``with_flag`` also returns the extrapolation flag."""
    if not 0 <= k < model.n_t:
        raise IndexError(f"time index {k} outside 0..{model.n_t - 1}")
    phi = model.features(p)
    out = phi @ model.weights[:, k * model.n_d:(k + 1) * model.n_d]
    if with_flag:
        return out, model.extrapolates(p)
    return out


def rbf_eval_all(model: RbfInterpolant, p) -> np.ndarray:
    """All time steps at once, shape ``(n_d, N_t)``."""
    return (model.features(p) @ model.weights).reshape(model.n_t, model.n_d).T
