"""Command-line experiment runner.

Usage::

    python3 -m defectrom SUBCOMMAND [--config PATH] [--alg {1,2}] [--surrogate {rbf,fnn}]
                                    [--seed N] [--out DIR]

Subcommands write CSV, JSON and binary matrix artifacts into ``--out``.
Artifacts are staged and only moved into place when the command succeeds.
On failure a JSON object ``{"error": ..., "message": ...}`` goes to stderr
and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys as _sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .closure import FnnModel, RbfInterpolant, build_defect_tensor, two_stage_svd
from .config import ConfigError, ExperimentConfig, load_config
from .estimator import (auxiliary_residual, inverse_norm, output_error_estimate, residual_trajectory,
                        rho_from_norms, solve_dual, state_error_bound, state_error_constants)
from .io import ArtifactStage, config_hash, greedy_result_dict, write_csv, write_defect_tensor, write_matrix
from .models import ParametricSystem, assemble
from .reduction import (GreedyResult, ReducedBasis, SnapshotCache, defect_subset, estimate_parameters,
                        galerkin_project, pod_greedy_ode, pod_greedy_standard, pod_update, solve_rom_blackbox,
                        split_parameters, train_defect_closure)
from .timestepping import ImexScheme, solve_blackbox

__all__ = ["main", "run", "Experiment", "heat_failure_study", "SUBCOMMANDS"]

log = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate-fom", "closure-train", "greedy", "estimate", "demo-heat", "svd-report")


class Experiment:
    """Resolved config plus the objects every subcommand needs."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.sys: ParametricSystem = assemble(cfg.model, n_cells=cfg.cells, **cfg.model_options())
        self.grid = cfg.grid()
        self.solver = cfg.solver()
        self.scheme = ImexScheme(cfg.scheme_order)
        self.cache = SnapshotCache(self.sys, self.grid, self.solver)
        # the output location does not change results, so it stays out of the hash
        settings = {k: v for k, v in cfg.as_dict().items() if k != "out"}
        self.hash = config_hash(json.dumps(settings, sort_keys=True))

    @property
    def parameter(self) -> np.ndarray:
        return self.sys.domain.check(np.asarray(self.cfg.parameter, dtype=float))

    def split(self) -> tuple:
        P = self.sys.domain.sample(self.cfg.samples_per_axis)
        return split_parameters(P, self.cfg.train_fraction, self.cfg.seed)

    def defect_params(self, train) -> np.ndarray:
        return defect_subset(train, min(self.cfg.d_s, train.shape[0]))

    def greedy(self, train) -> GreedyResult:
        c = self.cfg
        if c.algorithm == 1:
            return pod_greedy_standard(self.sys, train, c.tol, c.r_c, self.scheme, self.grid, self.solver,
                                       max_iter=c.max_iter, solver=c.rom_solver, use_deim=c.use_deim,
                                       cache=self.cache, estimator=c.estimator, lipschitz=c.lipschitz)
        return pod_greedy_ode(self.sys, train, self.defect_params(train), c.tol, c.tol_svd_t, c.tol_svd_p, c.r_c,
                              self.scheme, self.grid, self.solver, c.surrogate, update_defect=c.update_defect,
                              max_iter=c.max_iter, hyper=c.fnn(), use_deim=c.use_deim, cache=self.cache)

    def param_columns(self) -> list:
        return list(self.sys.domain.names)


# studies ====================================================================


def heat_failure_study(exp: Experiment, p=None) -> dict:
    """Closure-free estimates for a black-box heat ROM compared to its true output error.

    The ROM (POD basis of size ``basis_size`` at ``p``) and the reference are
    both integrated by the black-box solver; the residual is the imposed
    scheme's residual without a closure.  Returns per-step arrays.
    """
    sys, grid, scheme = exp.sys, exp.grid, exp.scheme
    p = exp.parameter if p is None else sys.domain.check(p)
    fom = solve_blackbox(sys, grid, exp.solver, p)
    basis = pod_update(ReducedBasis.empty(sys.dim), fom.states, exp.cfg.basis_size)
    rom = galerkin_project(sys, basis.V, scheme)
    red = solve_rom_blackbox(rom, grid, exp.solver, p)
    X_tilde = red.lifted()
    true = np.linalg.norm(sys.C @ fom.states - red.outputs, axis=0)

    res = residual_trajectory(sys, X_tilde, None, scheme, p, grid)
    zeta, xi = state_error_constants(sys, scheme, p, grid.dt, exp.cfg.lipschitz)
    e0 = float(np.linalg.norm(fom.states[:, 0] - X_tilde[:, 0]))
    state = np.linalg.norm(sys.C, 2) * state_error_bound(res.norms, zeta, xi, e0)

    aux = auxiliary_residual(sys, fom, red, None, scheme, p, grid)
    rho, _ = rho_from_norms(np.linalg.norm(aux.identity, axis=0), res.norms)
    dual = solve_dual(sys, scheme, p, grid.dt)
    E = scheme.lhs(sys.A(p), grid.dt)
    delta_b = output_error_estimate("b", res.norms, dual.r_du_norm, inverse_norm(E), dual.x_du_norm, rho)
    return {"k": np.arange(grid.n_t), "t": grid.times, "true": true, "estimate": state,
            "delta_bar_b": delta_b.per_step, "residual": res.norms, "rho_bar": rho}


# subcommands ================================================================


def _simulate_fom(exp: Experiment, out: Path) -> dict:
    p = exp.parameter
    traj = exp.cache(p)
    write_matrix(out / "trajectory.bin", traj.states)
    Y = exp.sys.C @ traj.states
    cols = ["k", "t"] + [f"y{j}" for j in range(Y.shape[0])]
    rows = [[k, t, *Y[:, k]] for k, t in enumerate(exp.grid.times)]
    write_csv(out / "outputs.csv", cols, rows, exp.hash)
    return {"parameter": p.tolist(), "dim": exp.sys.dim, "n_t": exp.grid.n_t, "solver": traj.info}


def _closure_train(exp: Experiment, out: Path) -> dict:
    train, _ = exp.split()
    Xd = exp.defect_params(train)
    tensor = build_defect_tensor(exp.sys, [exp.cache(p) for p in Xd], exp.scheme)
    write_defect_tensor(out / "defect", tensor)
    c = exp.cfg
    closure = train_defect_closure(exp.sys, Xd, exp.scheme, c.tol_svd_t, c.tol_svd_p, c.surrogate, exp.cache,
                                   c.fnn())
    write_matrix(out / "closure_basis.bin", closure.V_d)
    meta = {"surrogate": c.surrogate, "n_d": closure.n_d, "params": Xd.tolist(),
            "stage1_ranks": list(map(int, closure.info["svd"]["stage1_ranks"]))}
    model = closure.surrogate
    if isinstance(model, RbfInterpolant):
        write_matrix(out / "rbf_weights.bin", model.weights)
        meta["condition"] = model.cond
    elif isinstance(model, FnnModel):
        write_matrix(out / "fnn_theta.bin", model.theta)
        meta["final_loss"] = model.final_loss
        write_csv(out / "fnn_loss.csv", ["epoch", "loss"], list(enumerate(model.loss_history)), exp.hash)
    (out / "closure.json").write_text(json.dumps(meta, indent=2))
    return meta


def _convergence_rows(result: GreedyResult) -> list:
    return [[r.iteration, *r.p_star, r.epsilon, r.n, r.n_deim, r.rho_bar] for r in result.records]


def _greedy_cmd(exp: Experiment, out: Path) -> dict:
    train, _ = exp.split()
    result = exp.greedy(train)
    payload = greedy_result_dict(result)
    (out / "greedy.json").write_text(json.dumps(payload, indent=2))
    write_matrix(out / "basis.bin", result.basis.V)
    cols = ["iteration", *exp.param_columns(), "epsilon", "n", "n_deim", "rho_bar"]
    write_csv(out / "convergence.csv", cols, _convergence_rows(result), exp.hash)
    return {"converged": result.converged, "iterations": result.iterations, "n": result.basis.n}


def _estimate_cmd(exp: Experiment, out: Path) -> dict:
    train, test = exp.split()
    if test.shape[0] == 0:
        raise ValueError("empty test set; lower train_fraction")
    result = exp.greedy(train)
    if result.algorithm == 1:
        raise ValueError("estimate needs the data-enhanced greedy (--alg 2)")
    ests = estimate_parameters(result, exp.sys, test, exp.solver)
    times = exp.grid.times
    rows, summary = [], []
    for p, e in zip(test, ests):
        rows.extend([*p, k, times[k], e.per_step[k], e.variant] for k in range(times.size))
        fom = exp.cache(p)
        red = solve_rom_blackbox(result.rom, exp.grid, exp.solver, p)
        true = np.linalg.norm(exp.sys.C @ fom.states - red.outputs, axis=0)
        summary.append([*p, e.mean, float(true.sum() / true.size)])
    pc = exp.param_columns()
    write_csv(out / "estimates.csv", [*pc, "k", "t", "delta_bar", "variant"], rows, exp.hash)
    write_csv(out / "estimates_summary.csv", [*pc, "mean_estimate", "mean_true_error"], summary, exp.hash)
    write_csv(out / "convergence.csv", ["iteration", *pc, "epsilon", "n", "n_deim", "rho_bar"],
              _convergence_rows(result), exp.hash)
    return {"n": result.basis.n, "max_mean_estimate": max(s[-2] for s in summary)}


def _demo_heat(exp: Experiment, out: Path) -> dict:
    if exp.cfg.model != "heat":
        raise ValueError("demo-heat needs model id 'heat'")
    r = heat_failure_study(exp)
    k = r["k"][1:]
    ratio = r["estimate"][1:] / np.maximum(r["true"][1:], np.finfo(float).tiny)
    rows = [[int(kk), r["t"][kk], r["true"][kk], r["estimate"][kk], q, r["delta_bar_b"][kk]]
            for kk, q in zip(k, ratio)]
    write_csv(out / "demo_heat.csv", ["k", "t", "true_error", "estimate", "ratio", "delta_bar_b"], rows, exp.hash)
    return {"fraction_ratio_ge_100": float(np.mean(ratio >= 100.0)), "median_ratio": float(np.median(ratio))}


def _svd_report(exp: Experiment, out: Path) -> dict:
    train, _ = exp.split()
    Xd = exp.defect_params(train)
    tensor = build_defect_tensor(exp.sys, [exp.cache(p) for p in Xd], exp.scheme)
    _, _, info = two_stage_svd(tensor, exp.cfg.tol_svd_t, exp.cfg.tol_svd_p)
    pc = exp.param_columns()
    rows = []
    for p, s in zip(Xd, info["stage1_singular_values"]):
        rows.extend([*p, i, v] for i, v in enumerate(s))
    write_csv(out / "svd_stage1.csv", [*pc, "index", "sigma"], rows, exp.hash)
    write_csv(out / "svd_stage2.csv", ["index", "sigma"], list(enumerate(info["stage2_singular_values"])), exp.hash)
    snaps = np.hstack([exp.cache(p).states for p in Xd])
    s = np.linalg.svd(snaps, compute_uv=False)
    write_csv(out / "svd_snapshots.csv", ["index", "sigma"], list(enumerate(s)), exp.hash)
    return {"n_d": int(info["n_d"]), "stage1_ranks": list(map(int, info["stage1_ranks"]))}


_HANDLERS = {
    "simulate-fom": _simulate_fom,
    "closure-train": _closure_train,
    "greedy": _greedy_cmd,
    "estimate": _estimate_cmd,
    "demo-heat": _demo_heat,
    "svd-report": _svd_report,
}


def run(subcommand: str, cfg: ExperimentConfig) -> dict:
    """Run one subcommand; artifacts land in ``cfg.out`` only on success."""
    if subcommand not in _HANDLERS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    cfg = cfg.resolved()
    exp = Experiment(cfg)
    t0 = time.perf_counter()
    with ArtifactStage(cfg.out) as stage:
        summary = _HANDLERS[subcommand](exp, stage)
        summary = {"subcommand": subcommand, "config_hash": exp.hash, **summary,
                   "wall_time": time.perf_counter() - t0}
        (stage / f"{subcommand}.summary.json").write_text(json.dumps(summary, indent=2, default=float))
    return summary


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="defectrom", description="Data-enhanced reduced-order modelling experiments.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, help="INI experiment file (defaults: heat model)")
    ap.add_argument("--alg", type=int, choices=(1, 2), help="greedy algorithm")
    ap.add_argument("--surrogate", choices=("rbf", "fnn"), help="defect coefficient surrogate")
    ap.add_argument("--seed", type=int, help="seed for splits and network initialization")
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _fail(kind: str, message: str, code: int) -> int:
    _sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: Optional[list] = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return _fail("UsageError", "invalid command line", int(exc.code or 2))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        overrides = {k: v for k, v in (("algorithm", args.alg), ("surrogate", args.surrogate),
                                        ("seed", args.seed), ("out", None if args.out is None else str(args.out)))
                     if v is not None}
        summary = run(args.subcommand, replace(cfg, **overrides))
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), 2)
    except Exception as exc:  # reported as JSON
        return _fail(type(exc).__name__, str(exc), 1)
    print(json.dumps(summary, default=float))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
