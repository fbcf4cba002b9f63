"""Time integration on uniform output grids.

Two families live here.  The *black-box* integrator is an adaptive
Dormand-Prince 5(4) pair with PI step control and continuous output; callers
only ever see its samples on the grid, never its internal steps.  The
*imposed* schemes are first-order IMEX Euler and the second-order
Crank-Nicolson/Adams-Bashforth (CNAB2) rule, both with an optional additive
per-step closure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import odeint, solve_ivp

from .models import ParametricSystem, TimeGrid, Trajectory

__all__ = [
    "SolverConfig",
    "ImexScheme",
    "IntegrationError",
    "FactorizationError",
    "dopri54",
    "integrate",
    "solve_blackbox",
    "solve_imex",
    "factorize",
]

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """Adaptive integration failed; ``last_time`` is the last accepted time."""

    def __init__(self, message: str, last_time: float):
        super().__init__(f"{message} (last good time t={last_time:.6g})")
        self.last_time = last_time


class FactorizationError(RuntimeError):
    """The implicit IMEX matrix could not be factorized."""


BLACKBOX_METHODS = ("dp54", "lsoda", "bdf")


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the black-box solver.

    ``method="dp54"`` selects the built-in Dormand-Prince pair.  ``"lsoda"``
    (SciPy's ``odeint``) and ``"bdf"`` (SciPy's variable-order BDF) are
    library solvers for stiff models.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 5_000_000
    initial_step: Optional[float] = None
    method: str = "dp54"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if self.method not in BLACKBOX_METHODS:
            raise ValueError(f"unknown black-box method {self.method!r}")

    def tightened(self, factor: float = 0.5) -> "SolverConfig":
        return SolverConfig(self.rtol * factor, self.atol * factor, self.max_steps, self.initial_step, self.method)


# Dormand-Prince 5(4) =========================================================

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_A71, _A73, _A74, _A75, _A76 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40
# Shampine's continuous extension (Hairer, Norsett & Wanner, contd5)
_D1, _D3, _D4 = -12715105075 / 11282082432, 87487479700 / 32700410799, -10690763975 / 1880347072
_D5, _D6, _D7 = 701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423

# PI controller constants
_BETA = 0.04
_EXPO1 = 0.2 - 0.75 * _BETA
_SAFE = 0.9
_FAC_MIN, _FAC_MAX = 0.2, 10.0


def _rms(v):
    return np.sqrt(np.mean(v * v)) if v.size else 0.0


def _initial_step(fun, t0, y0, f0, rtol, atol, tspan):
    sk = atol + rtol * np.abs(y0)
    d0, d1 = _rms(y0 / sk), _rms(f0 / sk)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, tspan)
    y1 = y0 + h0 * f0
    f1 = fun(t0 + h0, y1)
    d2 = _rms((f1 - f0) / sk) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, tspan)


def dopri54(
    fun: Callable,
    y0: np.ndarray,
    t_eval: np.ndarray,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    max_steps: int = 5_000_000,
    h0: Optional[float] = None,
) -> tuple:
    """Integrate ``y' = fun(t, y)`` and sample the solution at ``t_eval``.

    ``t_eval`` must be increasing; integration runs from ``t_eval[0]`` to
    ``t_eval[-1]``.  Returns ``(Y, stats)`` with ``Y[:, i] = y(t_eval[i])``.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    y = np.array(y0, dtype=float)
    n_out = len(t_eval)
    Y = np.empty((y.size, n_out))
    Y[:, 0] = y
    t, tend = t_eval[0], t_eval[-1]
    k1 = fun(t, y)
    nfev = 1
    h = h0 if h0 is not None else _initial_step(fun, t, y, k1, rtol, atol, tend - t)
    nfev += 1
    facold = 1e-4
    reject = False
    n_accept = n_reject = 0
    nxt = 1
    eps = np.finfo(float).eps
    while nxt < n_out:
        if n_accept + n_reject >= max_steps:
            raise IntegrationError(f"exceeded max_steps={max_steps}", t)
        if h < 16 * eps * max(abs(t), 1.0):
            raise IntegrationError(f"step size underflow (h={h:.3e})", t)
        last = t + 1.01 * h >= tend
        if last:
            h = tend - t
        k2 = fun(t + _C[1] * h, y + h * (_A21 * k1))
        k3 = fun(t + _C[2] * h, y + h * (_A31 * k1 + _A32 * k2))
        k4 = fun(t + _C[3] * h, y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3))
        k5 = fun(t + _C[4] * h, y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4))
        k6 = fun(t + h, y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5))
        y1 = y + h * (_A71 * k1 + _A73 * k3 + _A74 * k4 + _A75 * k5 + _A76 * k6)
        k7 = fun(t + h, y1)
        nfev += 6
        errv = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
        sk = atol + rtol * np.maximum(np.abs(y), np.abs(y1))
        err = _rms(errv / sk)
        if not np.isfinite(err):
            err = 1e10
        fac11 = err**_EXPO1
        if err <= 1.0:
            fac = fac11 / facold**_BETA
            fac = max(1 / _FAC_MAX, min(1 / _FAC_MIN, fac / _SAFE))
            hnew = h / fac
            facold = max(err, 1e-4)
            t_new = tend if last else t + h
            dense = None
            while nxt < n_out and t_eval[nxt] <= t_new + 1e-12 * max(1.0, abs(t_new)):
                te = t_eval[nxt]
                if abs(te - t_new) <= 1e-12 * max(1.0, abs(t_new)):
                    Y[:, nxt] = y1
                else:
                    if dense is None:
                        ydiff = y1 - y
                        bspl = h * k1 - ydiff
                        dense = (
                            y,
                            ydiff,
                            bspl,
                            ydiff - h * k7 - bspl,
                            h * (_D1 * k1 + _D3 * k3 + _D4 * k4 + _D5 * k5 + _D6 * k6 + _D7 * k7),
                        )
                    r1, r2, r3, r4, r5 = dense
                    th = (te - t) / h
                    th1 = 1.0 - th
                    Y[:, nxt] = r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)))
                nxt += 1
            if reject:
                hnew = min(hnew, h)
            reject = False
            k1, y, t = k7, y1, t_new
            n_accept += 1
        else:
            hnew = h / min(1 / _FAC_MIN, fac11 / _SAFE)
            reject = True
            n_reject += 1
        h = hnew
    if not np.all(np.isfinite(Y)):
        raise IntegrationError("solution became non-finite", t)
    return Y, {"nfev": nfev, "accepted": n_accept, "rejected": n_reject}


def integrate(fun: Callable, y0, grid: TimeGrid, cfg: SolverConfig, jac_sparsity=None, jac=None) -> tuple:
    """Black-box integration of ``y' = fun(t, y)`` sampled on ``grid``."""
    times = grid.times
    if cfg.method == "dp54":
        return dopri54(fun, y0, times, cfg.rtol, cfg.atol, cfg.max_steps, cfg.initial_step)
    if cfg.method == "lsoda":
        return _lsoda(fun, y0, times, cfg, jac_sparsity)
    kwargs = {}
    if jac is not None:
        kwargs["jac"] = jac
    elif jac_sparsity is not None:
        kwargs["jac_sparsity"] = jac_sparsity
    if cfg.initial_step is not None:
        kwargs["first_step"] = cfg.initial_step
    sol = solve_ivp(fun, (times[0], times[-1]), np.asarray(y0, dtype=float), method="BDF",
                    t_eval=times, rtol=cfg.rtol, atol=cfg.atol, **kwargs)
    if sol.status != 0 or sol.y.shape[1] != len(times):
        last = float(sol.t[-1]) if sol.t.size else float(times[0])
        raise IntegrationError(f"BDF integration failed: {sol.message}", last)
    return sol.y, {"nfev": sol.nfev, "njev": sol.njev, "nlu": sol.nlu}


def _bandwidth(pattern) -> tuple:
    coo = sp.coo_matrix(pattern)
    if coo.nnz == 0:
        return 0, 0
    off = coo.row - coo.col
    return int(max(off.max(), 0)), int(max(-off.min(), 0))


def _lsoda(fun, y0, times, cfg: SolverConfig, jac_sparsity=None) -> tuple:
    kwargs = {}
    if jac_sparsity is not None:
        ml, mu = _bandwidth(jac_sparsity)
        if max(ml, mu) <= len(y0) // 8:
            kwargs.update(ml=ml, mu=mu)
    if cfg.initial_step is not None:
        kwargs["h0"] = cfg.initial_step
    Y, info = odeint(lambda y, t: fun(t, y), np.asarray(y0, dtype=float), times, rtol=cfg.rtol, atol=cfg.atol,
                     mxstep=min(cfg.max_steps, 2**31 - 1), full_output=True, tfirst=False, **kwargs)
    if info["message"] != "Integration successful." or not np.all(np.isfinite(Y)):
        raise IntegrationError(f"LSODA integration failed: {info['message']}", float(info["tcur"][-1]))
    return Y.T, {"nfev": int(info["nfe"][-1]), "steps": int(info["nst"][-1])}


def _system_rhs(sys: ParametricSystem, p):
    A = sys.A(p).tocsr()
    B = sys.B(p)
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    f = sys.nonlinearity
    has_input = B.shape[1] > 0
    u = sys.input_signal

    def fun(t, x):
        out = A @ x
        if f is not None:
            out += f(x, p)
        if has_input:
            out += B @ u(t)
        return out

    return fun


def solve_blackbox(sys: ParametricSystem, grid: TimeGrid, cfg: SolverConfig, p) -> Trajectory:
    """Reference solution of the full system, sampled on ``grid``."""
    p = sys.domain.check(p)
    fun = _system_rhs(sys, p)
    jac = None
    if cfg.method == "bdf" and sys.is_linear:
        jac = sys.A(p).tocsc()
    states, stats = integrate(fun, sys.x0(p), grid, cfg, jac_sparsity=sys.jac_sparsity(), jac=jac)
    return Trajectory(states, grid, p, "blackbox", info=stats)


# IMEX schemes ================================================================


@dataclass(frozen=True)
class ImexScheme:
    """Imposed IMEX scheme of order 1 (Euler) or 2 (CNAB2).

    At step ``k`` the scheme reads ``E x^k = A_im x^{k-1} + explicit terms``.
    Order 1 uses ``E = I - dt A`` and ``A_im = I``.  Order 2 uses
    ``E = I - dt/2 A``, ``A_im = I + dt/2 A`` with Adams-Bashforth
    extrapolation of ``f`` and a trapezoidal input; its first step is an
    order-1 step.
    """

    order: int = 1

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("IMEX order must be 1 or 2")

    @property
    def name(self) -> str:
        return f"imex{self.order}"

    def theta(self, step: int) -> float:
        return 1.0 if self.order == 1 or step == 1 else 0.5

    def lhs(self, A, dt: float, step: int = 2):
        """Implicit matrix ``E`` of the given step (``step >= 2`` is the steady rule)."""
        I = sp.identity(A.shape[0], format="csr") if sp.issparse(A) else np.eye(A.shape[0])
        return I - self.theta(step) * dt * A

    def explicit_matrix(self, A, dt: float, step: int = 2):
        I = sp.identity(A.shape[0], format="csr") if sp.issparse(A) else np.eye(A.shape[0])
        if self.theta(step) == 1.0:
            return I
        return I + 0.5 * dt * A

    def implicit_part(self, A, X: np.ndarray, dt: float) -> np.ndarray:
        """Column ``k >= 1`` holds ``E x^k``; column 0 is zero."""
        out = np.zeros_like(X)
        AX = A @ X[:, 1:]
        out[:, 1:] = X[:, 1:] - dt * AX
        if self.order == 2 and X.shape[1] > 2:
            out[:, 2:] = X[:, 2:] - 0.5 * dt * AX[:, 1:]
        return out

    def explicit_part(self, A, X: np.ndarray, F: np.ndarray, BU: np.ndarray, dt: float) -> np.ndarray:
        """Column ``k >= 1`` holds ``A_im x^{k-1} + dt (f-extrapolation + input)``.

        ``F[:, k] = f(x^k)`` and ``BU[:, k] = B u(t^k)``.  Column 0 is zero.
        """
        out = np.zeros_like(X)
        out[:, 1:] = X[:, :-1] + dt * (F[:, :-1] + BU[:, 1:])
        if self.order == 2 and X.shape[1] > 2:
            out[:, 2:] = (
                X[:, 1:-1]
                + 0.5 * dt * (A @ X[:, 1:-1])
                + dt * (1.5 * F[:, 1:-1] - 0.5 * F[:, :-2])
                + 0.5 * dt * (BU[:, 2:] + BU[:, 1:-1])
            )
        return out


def factorize(E):
    """Sparse LU of ``E``; raises :class:`FactorizationError` when singular."""
    try:
        if sp.issparse(E):
            return spla.splu(sp.csc_matrix(E))
        from scipy.linalg import lu_factor

        lu = lu_factor(np.asarray(E), check_finite=True)
        if np.any(np.abs(np.diag(lu[0])) == 0):
            raise RuntimeError("matrix is exactly singular")
        return _DenseLU(lu)
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        raise FactorizationError(f"cannot factorize implicit matrix: {exc}") from exc


class _DenseLU:
    def __init__(self, lu):
        self.lu = lu

    def solve(self, b, trans="N"):
        from scipy.linalg import lu_solve

        return lu_solve(self.lu, b, trans={"N": 0, "T": 1}[trans])


def _as_closure(closure, n: int, n_t: int) -> Optional[np.ndarray]:
    if closure is None:
        return None
    D = np.asarray(closure, dtype=float)
    if D.shape == (n, n_t - 1):
        D = np.hstack([np.zeros((n, 1)), D])
    if D.shape != (n, n_t):
        raise ValueError(f"closure must have shape ({n}, {n_t - 1}) or ({n}, {n_t}), got {D.shape}")
    return D


def imex_march(A, B_u: np.ndarray, x0: np.ndarray, f: Callable, dt: float, scheme: ImexScheme,
               closure: Optional[np.ndarray] = None, lus=None) -> np.ndarray:
    """March an IMEX scheme for ``x' = A x + f(x) + (B u)(t)``.

    ``B_u[:, k]`` is the input term at ``t^k``; ``closure[:, k]`` is added to
    the right-hand side of step ``k``.  ``lus`` may carry prefactorized
    ``(E_step1, E_steady)``.
    """
    n, n_t = B_u.shape
    if lus is None:
        lu1 = factorize(scheme.lhs(A, dt, 1))
        lu2 = factorize(scheme.lhs(A, dt, 2)) if scheme.order == 2 else lu1
    else:
        lu1, lu2 = lus
    Aexp = scheme.explicit_matrix(A, dt, 2) if scheme.order == 2 else None
    X = np.empty((n, n_t))
    X[:, 0] = x0
    f_prev = f(X[:, 0])
    f_prev2 = None
    for k in range(1, n_t):
        xk = X[:, k - 1]
        if scheme.order == 1 or k == 1:
            rhs = xk + dt * (f_prev + B_u[:, k])
            lu = lu1
        else:
            rhs = Aexp @ xk + dt * (1.5 * f_prev - 0.5 * f_prev2) + 0.5 * dt * (B_u[:, k] + B_u[:, k - 1])
            lu = lu2
        if closure is not None:
            rhs = rhs + closure[:, k]
        X[:, k] = lu.solve(rhs)
        f_prev2 = f_prev
        if k < n_t - 1:
            f_prev = f(X[:, k])
    return X


def solve_imex(sys: ParametricSystem, grid: TimeGrid, scheme: ImexScheme, p, closure=None) -> Trajectory:
    """Solve the full system with an imposed IMEX scheme.

    ``closure`` (optional) is an ``N x N_t`` array of per-step vectors
    ``d^k`` (column 0 ignored) or ``N x K`` for steps ``1..K``; with it the
    result is the corrected full model.
    """
    p = sys.domain.check(p)
    A = sys.A(p)
    BU = sys.B(p) @ sys.u(grid.times)
    D = _as_closure(closure, sys.dim, grid.n_t)
    X = imex_march(A, BU, sys.x0(p), lambda x: sys.f(x, p), grid.dt, scheme, D)
    return Trajectory(X, grid, p, scheme.name, info={"closure": D is not None})
