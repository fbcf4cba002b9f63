"""Closure model: spatial defect basis, coefficient surrogate and exact overrides."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..models import ParameterDomain, TimeGrid
from ..timestepping import ImexScheme
from .defect import DefectTensor, two_stage_svd
from .fnn import FnnHyper, FnnModel, fnn_eval_all, fnn_train
from .rbf import RbfInterpolant, rbf_eval_all, rbf_fit

__all__ = ["ClosureModel", "closure_eval", "closure_update", "train_closure", "SURROGATES"]

SURROGATES = ("rbf", "fnn")


def _key(p) -> tuple:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(p, dtype=float)))


@dataclass
class ClosureModel:
    """Decoded defect ``d(t^k, p) ~ V_d s(k, p)`` with exact per-parameter overrides.

    ``surrogate`` may be ``None`` for a closure that only knows overrides
    (any other parameter then gets a zero defect).
    """

    V_d: np.ndarray
    surrogate: Optional[Union[RbfInterpolant, FnnModel]]
    scheme: ImexScheme
    grid: TimeGrid
    overrides: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.V_d.shape[0]

    @property
    def n_d(self) -> int:
        return self.V_d.shape[1]

    def copy(self) -> "ClosureModel":
        """Shallow copy with an independent override table (the surrogate is shared)."""
        return ClosureModel(self.V_d, self.surrogate, self.scheme, self.grid, dict(self.overrides), dict(self.info))

    def has_override(self, p) -> bool:
        return _key(p) in self.overrides

    def coefficients(self, p) -> np.ndarray:
        """Surrogate coefficients for every step, shape ``(n_d, N_t)``, column 0 zero."""
        if self.surrogate is None:
            return np.zeros((self.n_d, self.grid.n_t))
        if isinstance(self.surrogate, RbfInterpolant):
            C = rbf_eval_all(self.surrogate, p)
        else:
            C = fnn_eval_all(self.surrogate, p)
        C = np.array(C, dtype=float)
        C[:, 0] = 0.0
        return C

    def trajectory(self, p) -> np.ndarray:
        """Full defect trajectory ``N x N_t`` at ``p``."""
        exact = self.overrides.get(_key(p))
        if exact is not None:
            return exact
        return self.V_d @ self.coefficients(p)

    def projected(self, p, V: np.ndarray) -> np.ndarray:
        """``V^T d^k`` for all ``k`` without forming the full defect for surrogate data."""
        exact = self.overrides.get(_key(p))
        if exact is not None:
            return V.T @ exact
        return (V.T @ self.V_d) @ self.coefficients(p)


def closure_eval(model: ClosureModel, k: int, p) -> np.ndarray:
    """Defect vector at step ``k``; overrides take precedence over the surrogate."""
    if not 0 <= k < model.grid.n_t:
        raise IndexError(f"time index {k} outside 0..{model.grid.n_t - 1}")
    exact = model.overrides.get(_key(p))
    if exact is not None:
        return exact[:, k]
    if k == 0:
        return np.zeros(model.dim)
    return model.V_d @ model.coefficients(p)[:, k]


def closure_update(model: ClosureModel, p_star, exact: np.ndarray) -> None:
    """Register the exact defect trajectory at ``p_star``."""
    exact = np.array(exact, dtype=float)
    if exact.shape != (model.dim, model.grid.n_t):
        raise ValueError(f"exact defect must have shape {(model.dim, model.grid.n_t)}, got {exact.shape}")
    exact[:, 0] = 0.0
    exact.setflags(write=False)
    model.overrides[_key(p_star)] = exact


def train_closure(tensor: DefectTensor, domain: ParameterDomain, tol_t: float, tol_p: float,
                  surrogate: str = "rbf", hyper: FnnHyper = FnnHyper()) -> ClosureModel:
    """Compress ``tensor`` with the two-stage SVD and fit the chosen surrogate."""
    if surrogate not in SURROGATES:
        raise ValueError(f"unknown surrogate {surrogate!r}; expected one of {SURROGATES}")
    V_d, reduced, svd_info = two_stage_svd(tensor, tol_t, tol_p)
    if surrogate == "rbf":
        model = rbf_fit(reduced, tensor.params, domain)
    else:
        model = fnn_train(reduced, tensor.params, tensor.grid.times, hyper, domain)
    return ClosureModel(V_d, model, tensor.scheme, tensor.grid, info={"svd": svd_info, "surrogate": surrogate})
