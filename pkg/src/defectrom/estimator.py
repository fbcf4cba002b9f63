"""Residuals, dual quantities and a posteriori error estimators for the corrected ROM.

Residuals are evaluated in the imposed IMEX scheme.  Column ``k`` of every
residual matrix belongs to step ``k``; column 0 is zero because no step
precedes ``t^0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import ParametricSystem, TimeGrid
from .timestepping import ImexScheme, factorize

__all__ = [
    "DegenerateRatioError",
    "ResidualResult",
    "DualSolution",
    "ErrorEstimate",
    "residual_trajectory",
    "residual_corrected",
    "auxiliary_residual",
    "rho_from_norms",
    "rho_bar",
    "solve_dual",
    "dual_basis",
    "inverse_norm",
    "operator_norm",
    "state_error_constants",
    "state_error_bound",
    "output_error_estimate",
    "modified_output",
    "lipschitz_estimate",
]

DEGENERATE = 1e-14


class DegenerateRatioError(ZeroDivisionError):
    """A residual norm vanished while the auxiliary residual did not."""


# helpers =====================================================================


def _lifted(traj) -> np.ndarray:
    if hasattr(traj, "lifted"):
        return traj.lifted()
    if hasattr(traj, "states"):
        return traj.states
    return np.asarray(traj, dtype=float)


def _defect_matrix(closure, p, shape) -> Optional[np.ndarray]:
    if closure is None:
        return None
    D = closure.trajectory(p) if hasattr(closure, "trajectory") else np.asarray(closure, dtype=float)
    if D.shape != shape:
        raise ValueError(f"defect must have shape {shape}, got {D.shape}")
    return D


def _input_term(sys: ParametricSystem, p, grid: TimeGrid) -> np.ndarray:
    if sys.n_inputs == 0:
        return np.zeros((sys.dim, grid.n_t))
    return sys.B(p) @ sys.u(grid.times)


def _spectral(M: np.ndarray) -> float:
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


# residuals ===================================================================


@dataclass
class ResidualResult:
    """Residual matrix ``R`` (``N x N_t``) with per-step norms.

    With hyperreduction, ``R = R_I + E_H`` where ``R_I`` uses the DEIM
    approximation of ``f`` and ``E_H`` collects the hyperreduction error.
    """

    R: np.ndarray
    norms: np.ndarray
    R_I: Optional[np.ndarray] = None
    E_H: Optional[np.ndarray] = None


def residual_trajectory(sys: ParametricSystem, X_tilde: np.ndarray, closure, scheme: ImexScheme, p,
                        grid: TimeGrid, deim=None, X_explicit: Optional[np.ndarray] = None) -> ResidualResult:
    """Residual of the imposed scheme, ``explicit(X_explicit) + D - E X_tilde``.

    ``X_explicit`` defaults to ``X_tilde`` (ordinary residual); passing FOM
    states gives the auxiliary residual.
    """
    p = sys.domain.check(p)
    X_tilde = np.asarray(X_tilde, dtype=float)
    Xe = X_tilde if X_explicit is None else np.asarray(X_explicit, dtype=float)
    if X_tilde.shape != (sys.dim, grid.n_t) or Xe.shape != X_tilde.shape:
        raise ValueError(f"states must have shape {(sys.dim, grid.n_t)}")
    A = sys.A(p)
    BU = _input_term(sys, p, grid)
    F = sys.f(Xe, p)
    D = _defect_matrix(closure, p, X_tilde.shape)
    implicit = scheme.implicit_part(A, X_tilde, grid.dt)
    R = scheme.explicit_part(A, Xe, F, BU, grid.dt) - implicit
    if D is not None:
        R[:, 1:] += D[:, 1:]
    R_I = E_H = None
    if deim is not None and not sys.is_linear:
        F_I = deim.interpolate(F)
        R_I = scheme.explicit_part(A, Xe, F_I, BU, grid.dt) - implicit
        if D is not None:
            R_I[:, 1:] += D[:, 1:]
        E_H = R - R_I
    return ResidualResult(R, np.linalg.norm(R, axis=0), R_I, E_H)


def residual_corrected(sys: ParametricSystem, rom_traj, closure, scheme: ImexScheme, p, k: Optional[int] = None,
                       deim=None, grid: Optional[TimeGrid] = None):
    """Residual of the corrected ROM lifted to the full space.

    Parameters
    ----------
    rom_traj : CromSolution, Trajectory or ndarray
        Reduced solution (lifted with its basis) or full-space states.
    closure : ClosureModel, ndarray or None
        ``None`` gives the closure-free residual.
    k : int, optional
        If given, return ``(r^k, ||r^k||)``; otherwise the whole
        :class:`ResidualResult`.
    """
    if grid is None:
        grid = rom_traj.trajectory.grid if hasattr(rom_traj, "trajectory") else rom_traj.grid
    res = residual_trajectory(sys, _lifted(rom_traj), closure, scheme, p, grid, deim)
    if k is None:
        return res
    return res.R[:, k], float(res.norms[k])


@dataclass
class AuxiliaryResidual:
    R: np.ndarray
    norms: np.ndarray
    identity: np.ndarray
    identity_error: float


def auxiliary_residual(sys: ParametricSystem, fom_traj, rom_traj, closure, scheme: ImexScheme, p,
                       grid: Optional[TimeGrid] = None) -> AuxiliaryResidual:
    """Auxiliary residual with the explicit part taken from FOM states.

    Also returns ``E (x^k - x_tilde^k)``, which coincides with the auxiliary
    residual whenever ``fom_traj`` solves the corrected FOM with the same
    closure; ``identity_error`` is their relative difference.
    """
    if fom_traj is None:
        raise ValueError("auxiliary residual needs FOM states at this parameter")
    grid = grid or fom_traj.grid
    X = _lifted(fom_traj)
    Xt = _lifted(rom_traj)
    res = residual_trajectory(sys, Xt, closure, scheme, p, grid, X_explicit=X)
    ident = scheme.implicit_part(sys.A(p), X - Xt, grid.dt)
    scale = max(np.linalg.norm(res.R), np.linalg.norm(ident))
    err = float(np.linalg.norm(res.R - ident) / scale) if scale > 0 else 0.0
    return AuxiliaryResidual(res.R, res.norms, ident, err)


def rho_from_norms(aux_norms, res_norms, degenerate: float = DEGENERATE) -> tuple:
    """``(rho_bar, rho)`` from per-step norms; index 0 is ignored."""
    a = np.asarray(aux_norms, dtype=float)[1:]
    r = np.asarray(res_norms, dtype=float)[1:]
    if a.size == 0:
        raise ValueError("need at least one time step")
    rho = np.empty_like(r)
    both = (a < degenerate) & (r < degenerate)
    bad = (r < degenerate) & ~both
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0]) + 1
        raise DegenerateRatioError(f"residual vanishes at step {k} while the auxiliary residual is {a[k - 1]:.3e}")
    rho[both] = 1.0
    ok = ~both
    rho[ok] = a[ok] / r[ok]
    return float(rho.mean()), rho


def rho_bar(sys: ParametricSystem, p_star, fom_traj, rom_traj, closure, scheme: ImexScheme,
            grid: Optional[TimeGrid] = None) -> float:
    """Time-mean ratio of auxiliary to ordinary residual norms at ``p_star``."""
    grid = grid or fom_traj.grid
    aux = auxiliary_residual(sys, fom_traj, rom_traj, closure, scheme, p_star, grid)
    res = residual_trajectory(sys, _lifted(rom_traj), closure, scheme, p_star, grid)
    return rho_from_norms(aux.norms, res.norms)[0]


# dual system =================================================================


@dataclass
class DualSolution:
    """Dual state ``x_du`` (full or lifted from ``V_du``) and its residual."""

    x_du: np.ndarray
    r_du: np.ndarray
    x_du_norm: float
    r_du_norm: float
    V_du: Optional[np.ndarray] = None


def _dual_lhs(sys, scheme, p, dt):
    return scheme.lhs(sys.A(p), dt, 2)


def solve_dual(sys: ParametricSystem, scheme: ImexScheme, p, dt: float, basis: Optional[np.ndarray] = None,
               E=None) -> DualSolution:
    """Solve ``E^T x_du = -C^T`` in full or Galerkin-reduced form.

    ``E`` is the implicit matrix of the steady scheme step.  With ``basis``
    the reduced system ``V^T E^T V x_hat = -V^T C^T`` is solved and
    ``r_du = -C^T - E^T V x_hat``.
    """
    p = sys.domain.check(p)
    E = _dual_lhs(sys, scheme, p, dt) if E is None else E
    C_du = -sys.C.T
    if basis is None:
        lu = factorize(E)
        x = lu.solve(np.ascontiguousarray(C_du), trans="T")
        x = x.reshape(C_du.shape)
    else:
        V = np.asarray(basis, dtype=float)
        EtV = E.T @ V
        E_hat = V.T @ EtV
        try:
            xh = np.linalg.solve(E_hat, V.T @ C_du)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"reduced dual matrix is singular: {exc}") from exc
        x = V @ xh
    r = C_du - E.T @ x
    r = np.asarray(r)
    return DualSolution(x, r, _spectral(x), _spectral(r), basis)


def dual_basis(solutions) -> np.ndarray:
    """Orthonormal basis spanning a list of full dual solutions (``N x N_O`` each)."""
    M = np.hstack([np.asarray(s, dtype=float) for s in solutions])
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    keep = s > 1e-12 * s[0] if s.size and s[0] > 0 else np.zeros(0, bool)
    return U[:, keep]


# operator norms ==============================================================


def _start_vector(n: int) -> np.ndarray:
    v = 1.0 + 0.5 * np.sin(np.arange(1, n + 1))
    return v / np.linalg.norm(v)


def operator_norm(apply, apply_t, n: int, iters: int = 20, rtol: float = 1e-6) -> float:
    """Spectral norm of a linear map by power iteration on ``M^T M``."""
    v = _start_vector(n)
    est = 0.0
    for _ in range(max(iters, 1)):
        w = apply(v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        z = apply_t(w)
        v = z / np.linalg.norm(z)
        if est > 0 and abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return max(est, float(np.linalg.norm(apply(v))))


def inverse_norm(E, iters: int = 20, rtol: float = 1e-6, lu=None) -> float:
    """``||E^{-1}||_2`` by power iteration using a sparse LU of ``E``."""
    lu = factorize(E) if lu is None else lu
    return operator_norm(lu.solve, lambda w: lu.solve(w, trans="T"), E.shape[0], iters, rtol)


def state_error_constants(sys: ParametricSystem, scheme: ImexScheme, p, dt: float, L_f: float = 0.0,
                          iters: int = 20, rtol: float = 1e-6) -> tuple:
    """``(zeta, xi)`` with ``zeta = ||E^{-1}||`` and ``xi = ||E^{-1} A_im|| + dt L_f zeta``."""
    if L_f < 0:
        raise ValueError("L_f must be non-negative")
    A = sys.A(p)
    E = scheme.lhs(A, dt, 2)
    A_im = scheme.explicit_matrix(A, dt, 2)
    lu = factorize(E)
    zeta = inverse_norm(E, iters, rtol, lu)
    if scheme.order == 1:
        prop = zeta
    else:
        prop = operator_norm(lambda v: lu.solve(A_im @ v), lambda w: A_im.T @ lu.solve(w, trans="T"), sys.dim,
                             iters, rtol)
    return zeta, prop + dt * L_f * zeta


def state_error_bound(residual_norms, zeta: float, xi: float, e0_norm: float = 0.0) -> np.ndarray:
    """Closed-form state bound ``xi^k ||e^0|| + sum_i zeta xi^(k-i) ||r^i||``.

    ``residual_norms[0]`` is ignored; the result has the same length.
    """
    r = np.asarray(residual_norms, dtype=float)
    if np.any(r < 0) or e0_norm < 0 or zeta < 0 or xi < 0:
        raise ValueError("norms and constants must be non-negative")
    K = r.size - 1
    k = np.arange(K + 1)
    expo = k[:, None] - k[None, :]
    weights = np.where(expo >= 0, np.power(xi, np.maximum(expo, 0)), 0.0)
    weights[:, 0] = 0.0
    return xi**k * e0_norm + zeta * (weights @ r)


# output estimates ============================================================


@dataclass
class ErrorEstimate:
    """Per-step output error estimate and its time mean.

    ``variant`` is ``"a"`` or ``"b"`` for the data-enhanced estimates and
    ``"state"`` for the output bound derived from the state error bound.
    """

    per_step: np.ndarray
    mean: float
    rho_bar: float
    variant: str
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.per_step)) and np.all(self.per_step >= 0)):
            raise FloatingPointError("estimate must be finite and non-negative")


def output_error_estimate(variant: str, residual_norms, r_du_norm: float, Einv_norm: float, x_du_norm: float,
                          rho_bar: float, output_gap=None) -> ErrorEstimate:
    """Data-enhanced output error estimate.

    ``b``: ``(rho ||E^{-1}|| ||r_du|| + |1 - rho| ||x_du||) ||r^k||``.
    ``a``: ``b`` plus ``output_gap[k]``, the gap between the modified
    corrected output and the ROM output.  The mean is taken over ``N_t``
    entries with the ``k = 0`` entry equal to zero.
    """
    r = np.asarray(residual_norms, dtype=float)
    scalars = (r_du_norm, Einv_norm, x_du_norm, rho_bar)
    if np.any(r < 0) or any(s < 0 for s in scalars):
        raise ValueError("estimator inputs must be non-negative")
    if variant not in ("a", "b"):
        raise ValueError("variant must be 'a' or 'b'")
    factor = rho_bar * Einv_norm * r_du_norm + abs(1.0 - rho_bar) * x_du_norm
    per = factor * r
    per[0] = 0.0
    if variant == "a":
        if output_gap is None:
            raise ValueError("variant 'a' needs the output gap")
        gap = np.asarray(output_gap, dtype=float)
        if gap.shape != per.shape or np.any(gap < 0):
            raise ValueError("output gap must be non-negative with one entry per step")
        per = per + gap
        per[0] = 0.0
    consts = {"Einv_norm": Einv_norm, "x_du_norm": x_du_norm, "r_du_norm": r_du_norm, "factor": factor}
    return ErrorEstimate(per, float(per.sum() / per.size), rho_bar, variant, consts)


def modified_output(rom_outputs: np.ndarray, dual: DualSolution, R: np.ndarray) -> np.ndarray:
    """``y_bar^k = y_hat^k - x_du^T r^k`` for every step."""
    x = dual.x_du if isinstance(dual, DualSolution) else np.asarray(dual)
    return np.asarray(rom_outputs, dtype=float) - x.T @ np.asarray(R, dtype=float)


def lipschitz_estimate(sys: ParametricSystem, p, X: np.ndarray, max_columns: int = 400) -> float:
    """Largest difference quotient ``||f(x_i) - f(x_j)|| / ||x_i - x_j||`` over snapshot pairs.

    A heuristic lower estimate of the Lipschitz constant; zero for linear
    models.  At most ``max_columns`` evenly spaced columns are used.
    """
    if sys.is_linear:
        return 0.0
    X = np.asarray(X, dtype=float)
    if X.shape[1] > max_columns:
        X = X[:, np.linspace(0, X.shape[1] - 1, max_columns).astype(int)]
    F = sys.f(X, p)

    def pdist2(M):
        g = M.T @ M
        d = np.diag(g)
        return np.maximum(d[:, None] + d[None, :] - 2 * g, 0.0)

    dx, df = pdist2(X), pdist2(F)
    mask = dx > 1e-24 * max(dx.max(), 1.0)
    if not np.any(mask):
        return 0.0
    return float(np.sqrt(np.max(df[mask] / dx[mask])))
