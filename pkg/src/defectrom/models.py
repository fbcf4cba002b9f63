"""Parametric semi-discrete benchmark systems.

Every model is written in the first-order form

    dx/dt = A(p) x + f(x, p) + B(p) u(t),    y = C x,    x(0) = x0

with a sparse, affinely parameter-dependent ``A``.  Three finite-difference
benchmarks are provided: the 1-D heat equation, the viscous Burgers'
equation and the FitzHugh-Nagumo system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DomainError",
    "ParameterDomain",
    "AffineOperator",
    "ParametricSystem",
    "TimeGrid",
    "Trajectory",
    "assemble",
    "evaluate_rhs",
    "default_grid",
    "MODEL_IDS",
]

MODEL_IDS = ("heat", "burgers", "fhn")


class DomainError(ValueError):
    """Raised when a parameter lies outside the model's parameter domain."""


# Parameters ==================================================================


@dataclass(frozen=True)
class ParameterDomain:
    """Axis-aligned box of admissible parameters.

    Each axis carries a scale tag, ``"linear"`` or ``"log"``; log axes are
    mapped through ``log10`` before normalization to ``[0, 1]``.
    """

    lower: tuple
    upper: tuple
    scales: tuple
    names: tuple

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.scales) == len(self.names)):
            raise ValueError("domain bounds, scales and names must have equal length")
        for lo, hi, s in zip(self.lower, self.upper, self.scales):
            if not lo < hi:
                raise ValueError(f"empty parameter interval [{lo}, {hi}]")
            if s not in ("linear", "log"):
                raise ValueError(f"unknown axis scale {s!r}")
            if s == "log" and lo <= 0:
                raise ValueError("log-scaled axis needs a positive lower bound")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def as_array(self, p) -> np.ndarray:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != (self.dim,):
            raise DomainError(f"expected a parameter of length {self.dim}, got shape {p.shape}")
        return p

    def contains(self, p, rtol: float = 1e-12) -> bool:
        p = self.as_array(p)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        slack = rtol * np.maximum(np.abs(lo), np.abs(hi))
        return bool(np.all(p >= lo - slack) and np.all(p <= hi + slack))

    def check(self, p) -> np.ndarray:
        p = self.as_array(p)
        if not np.all(np.isfinite(p)) or not self.contains(p):
            raise DomainError(
                f"parameter {p.tolist()} outside domain "
                f"{list(zip(self.lower, self.upper))} ({', '.join(self.names)})"
            )
        return p

    def _warp(self, p: np.ndarray) -> tuple:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        p = np.asarray(p, dtype=float)
        log_axes = np.array([s == "log" for s in self.scales])
        if log_axes.any():
            p = p.copy()
            lo, hi = lo.copy(), hi.copy()
            p[..., log_axes] = np.log10(p[..., log_axes])
            lo[log_axes] = np.log10(lo[log_axes])
            hi[log_axes] = np.log10(hi[log_axes])
        return p, lo, hi

    def normalize(self, p) -> np.ndarray:
        """Map parameters (shape ``(..., dim)``) affinely onto ``[0, 1]``."""
        q, lo, hi = self._warp(p)
        return (q - lo) / (hi - lo)

    def sample(self, n_per_axis) -> np.ndarray:
        """Tensor grid with ``n_per_axis`` points per axis, respecting scale tags."""
        n_per_axis = np.broadcast_to(np.atleast_1d(n_per_axis), (self.dim,))
        axes = []
        for lo, hi, s, n in zip(self.lower, self.upper, self.scales, n_per_axis):
            if s == "log":
                axes.append(np.logspace(np.log10(lo), np.log10(hi), int(n)))
            else:
                axes.append(np.linspace(lo, hi, int(n)))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# Affine operators ============================================================


@dataclass(frozen=True)
class AffineOperator:
    """Parameter-separable matrix ``sum_q theta_q(p) M_q``.

    ``terms`` holds ``(theta, M)`` pairs with ``theta: p -> float`` and ``M``
    either a sparse matrix or a dense array.  The sparsity pattern of the sum
    does not depend on ``p``.
    """

    shape: tuple
    terms: tuple

    def __call__(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if not self.terms:
            return np.zeros(self.shape)
        out = None
        for theta, mat in self.terms:
            term = theta(p) * mat
            out = term if out is None else out + term
        if sp.issparse(out):
            return out.tocsr()
        return np.asarray(out)

    def coefficients(self, p) -> np.ndarray:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return np.array([theta(p) for theta, _ in self.terms])

    def pattern(self):
        """Union sparsity pattern of all terms as a boolean CSR matrix."""
        pat = sp.csr_matrix(self.shape, dtype=bool)
        for _, mat in self.terms:
            pat = pat + (sp.csr_matrix(mat) != 0)
        return pat.astype(bool).tocsr()

    def project(self, left: np.ndarray, right: Optional[np.ndarray] = None) -> list:
        """Project every term, ``left^T M_q right`` (``right`` omitted for input maps)."""
        out = []
        for theta, mat in self.terms:
            m = mat @ right if right is not None else mat
            m = np.asarray(m.todense()) if sp.issparse(m) else np.asarray(m)
            out.append((theta, left.T @ m))
        return out


def _sum_projected(terms: Sequence, p) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    out = None
    for theta, mat in terms:
        out = theta(p) * mat if out is None else out + theta(p) * mat
    return out


# Time grids and trajectories =================================================


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t^k = t0 + k*dt``, ``k = 0..K``."""

    t0: float
    tK: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not self.tK > self.t0:
            raise ValueError("final time must exceed initial time")
        steps = (self.tK - self.t0) / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"dt={self.dt} does not divide [{self.t0}, {self.tK}]")

    @property
    def K(self) -> int:
        return int(round((self.tK - self.t0) / self.dt))

    @property
    def n_t(self) -> int:
        return self.K + 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.K + 1)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.tK, self.dt / factor)


PROVENANCES = ("blackbox", "imex1", "imex2", "crom")


@dataclass
class Trajectory:
    """States sampled on a time grid; column ``k`` is the state at ``t^k``."""

    states: np.ndarray
    grid: TimeGrid
    parameter: np.ndarray
    provenance: str
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.parameter = np.atleast_1d(np.asarray(self.parameter, dtype=float))
        if self.states.ndim != 2 or self.states.shape[1] != self.grid.n_t:
            raise ValueError(
                f"states must have {self.grid.n_t} columns, got shape {self.states.shape}"
            )
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not np.all(np.isfinite(self.states)):
            raise FloatingPointError("trajectory contains non-finite values")


# Systems =====================================================================


@dataclass(frozen=True, eq=False)
class ParametricSystem:
    """Semi-discrete parametric ODE system; immutable after assembly."""

    name: str
    dim: int
    operator: AffineOperator
    input_map: AffineOperator
    output_map: np.ndarray
    initial_state: np.ndarray
    input_signal: Callable
    domain: ParameterDomain
    nonlinearity: Optional[Callable] = None
    nonlinearity_rows: Optional[Callable] = None
    f_pattern: Optional[sp.csr_matrix] = None
    grid_spacing: float = 0.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.output_map.ndim != 2 or self.output_map.shape[1] != self.dim:
            raise ValueError("output map must be N_O x N")
        if self.initial_state.shape != (self.dim,):
            raise ValueError("initial state must have length N")
        if self.operator.shape != (self.dim, self.dim):
            raise ValueError("operator must be N x N")

    @property
    def n_inputs(self) -> int:
        return self.input_map.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.output_map.shape[0]

    @property
    def is_linear(self) -> bool:
        return self.nonlinearity is None

    def A(self, p) -> sp.csr_matrix:
        return self.operator(self.domain.check(p))

    def B(self, p) -> np.ndarray:
        return np.asarray(self.input_map(self.domain.check(p)))

    @property
    def C(self) -> np.ndarray:
        return self.output_map

    def x0(self, p=None) -> np.ndarray:
        return self.initial_state.copy()

    def u(self, t) -> np.ndarray:
        """Input signal; scalar ``t`` gives ``(N_I,)``, array ``t`` gives ``(N_I, len(t))``."""
        return np.asarray(self.input_signal(t), dtype=float)

    def f(self, x: np.ndarray, p) -> np.ndarray:
        """Nonlinearity, applied column-wise when ``x`` is a matrix."""
        if self.nonlinearity is None:
            return np.zeros_like(x, dtype=float)
        return self.nonlinearity(x, np.atleast_1d(np.asarray(p, dtype=float)))

    def f_rows(self, x: np.ndarray, p, rows: np.ndarray) -> np.ndarray:
        """Entries ``rows`` of ``f(x, p)``; only ``dependencies(rows)`` of ``x`` are read."""
        rows = np.asarray(rows, dtype=int)
        if self.nonlinearity is None:
            return np.zeros((len(rows),) + x.shape[1:])
        if self.nonlinearity_rows is None:
            return self.f(x, p)[rows]
        return self.nonlinearity_rows(x, np.atleast_1d(np.asarray(p, dtype=float)), rows)

    def dependencies(self, rows) -> np.ndarray:
        """State indices that entries ``rows`` of ``f`` depend on."""
        rows = np.asarray(rows, dtype=int)
        if self.nonlinearity is None or len(rows) == 0:
            return np.zeros(0, dtype=int)
        if self.f_pattern is None:
            return np.arange(self.dim)
        return np.unique(self.f_pattern[rows].indices)

    def jac_sparsity(self) -> sp.csr_matrix:
        pat = self.operator.pattern()
        if self.f_pattern is not None:
            pat = (pat + self.f_pattern).astype(bool)
        elif self.nonlinearity is not None:
            pat = sp.csr_matrix(np.ones((self.dim, self.dim), dtype=bool))
        return pat.tocsr()

    def rhs(self, x: np.ndarray, t: float, p) -> np.ndarray:
        return evaluate_rhs(self, x, t, p)


def evaluate_rhs(sys: ParametricSystem, x, t: float, p) -> np.ndarray:
    """Right-hand side ``A(p) x + f(x, p) + B(p) u(t)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({sys.dim},)")
    p = sys.domain.check(p)
    out = sys.operator(p) @ x + sys.input_map(p) @ sys.u(t)
    if sys.nonlinearity is not None:
        out = out + sys.nonlinearity(x, p)
    return out


# Finite-difference building blocks ==========================================


def _dirichlet_laplacian(n: int, h: float) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    return (sp.diags([off, main, off], [-1, 0, 1]) / h**2).tocsr()


def _neumann_laplacian(n: int, h: float) -> sp.csr_matrix:
    # ghost-node closure at both ends; boundary flux enters through B
    lap = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]).tolil()
    lap[0, 1] = 2.0
    lap[n - 1, n - 2] = 2.0
    return (lap.tocsr() / h**2).tocsr()


def _central_difference(n: int, h: float) -> sp.csr_matrix:
    return (sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1]) / (2 * h)).tocsr()


def _no_input(t):
    t = np.asarray(t, dtype=float)
    return np.zeros((0,) + t.shape)


# Heat ------------------------------------------------------------------------


def _heat(n_cells: int) -> ParametricSystem:
    h = 1.0 / n_cells
    n = n_cells - 1
    z = h * np.arange(1, n_cells)
    lap = _dirichlet_laplacian(n, h)
    mean, std = 0.5, 0.15
    x0 = np.exp(-0.5 * ((z - mean) / std) ** 2) / (std * np.sqrt(2 * np.pi))
    C = np.zeros((1, n))
    C[0, -1] = 1.0
    return ParametricSystem(
        name="heat",
        dim=n,
        operator=AffineOperator((n, n), ((lambda p: p[0], lap),)),
        input_map=AffineOperator((n, 0), ()),
        output_map=C,
        initial_state=x0,
        input_signal=_no_input,
        domain=ParameterDomain((0.01,), (0.1,), ("linear",), ("mu",)),
        grid_spacing=h,
        info={"nodes": z},
    )


# Burgers ---------------------------------------------------------------------


def _burgers(n_cells: int, convection: str = "central") -> ParametricSystem:
    n = n_cells
    h = 1.0 / (n + 1)
    z = h * np.arange(1, n + 1)
    lap = _dirichlet_laplacian(n, h)
    D = _central_difference(n, h)
    if convection not in ("central", "upwind"):
        raise ValueError(f"unknown convection stencil {convection!r}")

    def shifted(x, rows=None):
        # neighbours with homogeneous Dirichlet values outside [0, n)
        if rows is None:
            pad = np.zeros((1,) + x.shape[1:])
            xp = np.concatenate([pad, x, pad], axis=0)
            return xp[:-2], xp[2:]
        left = np.where((rows > 0)[(...,) + (None,) * (x.ndim - 1)], x[np.maximum(rows - 1, 0)], 0.0)
        right = np.where((rows < n - 1)[(...,) + (None,) * (x.ndim - 1)], x[np.minimum(rows + 1, n - 1)], 0.0)
        return left, right

    def convect(xc, left, right):
        if convection == "central":
            return -xc * (right - left) / (2 * h)
        back = (xc - left) / h
        fwd = (right - xc) / h
        return -xc * np.where(xc > 0, back, fwd)

    def f(x, p):
        left, right = shifted(x)
        return convect(x, left, right)

    def f_rows(x, p, rows):
        left, right = shifted(x, rows)
        return convect(x[rows], left, right)

    pattern = (sp.diags([np.ones(n - 1), np.ones(n), np.ones(n - 1)], [-1, 0, 1]) != 0).tocsr()
    C = np.zeros((1, n))
    C[0, -1] = 1.0
    return ParametricSystem(
        name="burgers",
        dim=n,
        operator=AffineOperator((n, n), ((lambda p: p[0], lap),)),
        input_map=AffineOperator((n, 0), ()),
        output_map=C,
        initial_state=np.sin(2 * np.pi * z),
        input_signal=_no_input,
        domain=ParameterDomain((0.005,), (1.0,), ("log",), ("mu",)),
        nonlinearity=f,
        nonlinearity_rows=f_rows,
        f_pattern=pattern,
        grid_spacing=h,
        info={"nodes": z, "convection": convection, "difference": D},
    )


# FitzHugh-Nagumo --------------------------------------------------------------

FHN_B = 0.5
FHN_GAMMA = 2.0
FHN_LENGTH = 1.0


def fhn_stimulus(t):
    t = np.asarray(t, dtype=float)
    return 50000.0 * t**3 * np.exp(-15.0 * t)


def _fhn(n_nodes: int) -> ParametricSystem:
    m = n_nodes
    n = 2 * m
    h = FHN_LENGTH / (m - 1)
    z = h * np.arange(m)
    lap = _neumann_laplacian(m, h)
    eye = sp.identity(m, format="csr")
    zero = sp.csr_matrix((m, m))
    diffusion = sp.bmat([[lap, zero], [zero, zero]], format="csr")
    coupling = sp.bmat([[zero, -eye], [zero, zero]], format="csr")
    recovery = sp.bmat([[zero, zero], [FHN_B * eye, -FHN_GAMMA * eye]], format="csr")

    flux = np.zeros((n, 2))
    flux[0, 0] = 2.0 / h
    source_v1 = np.zeros((n, 2))
    source_v1[:m, 1] = 1.0
    source_v2 = np.zeros((n, 2))
    source_v2[m:, 1] = 1.0

    def cubic(v):
        return v * (v - 0.1) * (1.0 - v)

    def f(x, p):
        out = np.zeros_like(x, dtype=float)
        v = x[:m]
        out[:m] = v * (v - 0.1) * (1.0 - v) * (1.0 / p[0])
        return out

    def f_rows(x, p, rows):
        vals = cubic(x[rows]) / p[0]
        vals[rows >= m] = 0.0
        return vals

    def signal(t):
        if np.ndim(t) == 0:
            t = float(t)
            return np.array([50000.0 * t**3 * np.exp(-15.0 * t), 1.0])
        t = np.asarray(t, dtype=float)
        return np.stack([fhn_stimulus(t), np.ones_like(t)])

    pattern = sp.diags(np.r_[np.ones(m), np.zeros(m)], 0, format="csr")
    pattern.eliminate_zeros()
    C = np.zeros((2, n))
    C[0, 0] = 1.0
    C[1, m] = 1.0
    return ParametricSystem(
        name="fhn",
        dim=n,
        operator=AffineOperator(
            (n, n),
            (
                (lambda p: p[0], diffusion),
                (lambda p: 1.0 / p[0], coupling),
                (lambda p: 1.0, recovery),
            ),
        ),
        input_map=AffineOperator(
            (n, 2),
            (
                (lambda p: p[0], flux),
                (lambda p: p[1] / p[0], source_v1),
                (lambda p: p[1], source_v2),
            ),
        ),
        output_map=C,
        initial_state=np.full(n, 0.001),
        input_signal=signal,
        domain=ParameterDomain((0.01, 0.025), (0.04, 0.075), ("linear", "linear"), ("epsilon", "c")),
        nonlinearity=f,
        nonlinearity_rows=f_rows,
        f_pattern=pattern.astype(bool),
        grid_spacing=h,
        info={"nodes": z, "b": FHN_B, "gamma": FHN_GAMMA, "length": FHN_LENGTH},
    )


# Public assembly =============================================================

_DEFAULT_CELLS = {"heat": 256, "burgers": 1000, "fhn": 512}
_DEFAULT_GRIDS = {
    "heat": TimeGrid(0.0, 1.0, 0.01),
    "burgers": TimeGrid(0.0, 2.0, 0.01),
    "fhn": TimeGrid(0.0, 5.0, 0.01),
}


def default_grid(model_id: str) -> TimeGrid:
    try:
        return _DEFAULT_GRIDS[model_id]
    except KeyError:
        raise ValueError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}") from None


def assemble(model_id: str, p=None, n_cells: Optional[int] = None, **options) -> ParametricSystem:
    """Assemble a benchmark system.

    Parameters
    ----------
    model_id : {"heat", "burgers", "fhn"}
    p : array_like, optional
        If given, validated against the model's parameter domain.
    n_cells : int, optional
        Heat: number of grid cells (``N = n_cells - 1``). Burgers: number of
        interior unknowns (``N = n_cells``). FitzHugh-Nagumo: nodes per field
        (``N = 2 n_cells``). Must be at least 8.
    **options
        ``convection="central"|"upwind"`` for Burgers.
    """
    if model_id not in MODEL_IDS:
        raise ValueError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")
    n_cells = _DEFAULT_CELLS[model_id] if n_cells is None else int(n_cells)
    if n_cells < 8:
        raise ValueError("n_cells must be at least 8")
    if model_id == "heat":
        sys = _heat(n_cells)
    elif model_id == "burgers":
        sys = _burgers(n_cells, **options)
    else:
        sys = _fhn(n_cells)
    if p is not None:
        sys.domain.check(p)
    return sys
