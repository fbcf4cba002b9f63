"""Experiment configuration: one INI file with fixed sections and keys.

Unknown sections or keys are rejected.  Every key is optional; missing
values fall back to per-model defaults (see :data:`MODEL_DEFAULTS`).
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .closure.fnn import FnnHyper
from .models import MODEL_IDS, TimeGrid, default_grid
from .timestepping import BLACKBOX_METHODS, SolverConfig

__all__ = ["ConfigError", "ExperimentConfig", "MODEL_DEFAULTS", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# section -> key -> (attribute, parser)
def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.replace(";", ",").split(",") if v.strip())


def _ints(s: str) -> tuple:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


SCHEMA = {
    "model": {"id": ("model", str), "cells": ("cells", int), "convection": ("convection", str),
              "parameter": ("parameter", _floats)},
    "time": {"t0": ("t0", float), "tK": ("tK", float), "dt": ("dt", float)},
    "solver": {"method": ("method", str), "rtol": ("rtol", float), "atol": ("atol", float),
               "max_steps": ("max_steps", int)},
    "greedy": {"algorithm": ("algorithm", int), "scheme_order": ("scheme_order", int), "tol": ("tol", float),
               "r_c": ("r_c", int), "max_iter": ("max_iter", int), "seed": ("seed", int),
               "train_fraction": ("train_fraction", float), "samples_per_axis": ("samples_per_axis", int),
               "update_defect": ("update_defect", _bool), "use_deim": ("use_deim", _bool),
               "estimator": ("estimator", str), "lipschitz": ("lipschitz", float),
               "rom_solver": ("rom_solver", str)},
    "closure": {"d_s": ("d_s", int), "tol_svd_t": ("tol_svd_t", float), "tol_svd_p": ("tol_svd_p", float),
                "surrogate": ("surrogate", str)},
    "fnn": {"hidden": ("hidden", _ints), "epochs": ("epochs", int), "learning_rate": ("learning_rate", float)},
    "demo": {"basis_size": ("basis_size", int)},
    "output": {"dir": ("out", str)},
}

MODEL_DEFAULTS = {
    "heat": dict(cells=256, parameter=(0.06,), method="dp54", scheme_order=1, tol=1e-4, r_c=1,
                 train_fraction=0.8, samples_per_axis=100, d_s=16, tol_svd_t=1e-4, tol_svd_p=1e-4),
    "burgers": dict(cells=1000, parameter=(0.01,), method="lsoda", scheme_order=1, tol=1e-4, r_c=1,
                    train_fraction=0.8, samples_per_axis=100, d_s=16, tol_svd_t=1e-4, tol_svd_p=1e-4),
    "fhn": dict(cells=512, parameter=(0.02, 0.05), method="dp54", scheme_order=2, tol=1e-3, r_c=3,
                train_fraction=0.7, samples_per_axis=10, d_s=21, tol_svd_t=1e-6, tol_svd_p=1e-6),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment settings.

    Times are in the model's nondimensional time units, tolerances are
    relative (SVD, greedy) or absolute/relative pairs (solver).
    """

    model: str = "heat"
    cells: Optional[int] = None
    convection: str = "central"
    parameter: Optional[tuple] = None
    t0: Optional[float] = None
    tK: Optional[float] = None
    dt: Optional[float] = None
    method: Optional[str] = None
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 5_000_000
    algorithm: int = 2
    scheme_order: Optional[int] = None
    tol: Optional[float] = None
    r_c: Optional[int] = None
    max_iter: int = 30
    seed: int = 0
    train_fraction: Optional[float] = None
    samples_per_axis: Optional[int] = None
    update_defect: bool = True
    use_deim: bool = True
    estimator: str = "state"
    lipschitz: float = 0.0
    rom_solver: str = "blackbox"
    d_s: Optional[int] = None
    tol_svd_t: Optional[float] = None
    tol_svd_p: Optional[float] = None
    surrogate: str = "rbf"
    hidden: tuple = (16, 64, 64)
    epochs: int = 2000
    learning_rate: float = 0.005
    basis_size: int = 12
    out: str = "out"
    source: str = field(default="", compare=False, repr=False)

    def resolved(self) -> "ExperimentConfig":
        """Fill model-dependent defaults and validate."""
        if self.model not in MODEL_IDS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODEL_IDS}")
        fill = {k: v for k, v in MODEL_DEFAULTS[self.model].items() if getattr(self, k) is None}
        grid = default_grid(self.model)
        for k in ("t0", "tK", "dt"):
            if getattr(self, k) is None:
                fill[k] = getattr(grid, k)
        cfg = replace(self, **fill)
        cfg._validate()
        return cfg

    def _validate(self) -> None:
        checks = [
            (self.method in BLACKBOX_METHODS, f"solver method must be one of {BLACKBOX_METHODS}"),
            (self.algorithm in (1, 2), "algorithm must be 1 or 2"),
            (self.scheme_order in (1, 2), "scheme_order must be 1 or 2"),
            (self.surrogate in ("rbf", "fnn"), "surrogate must be 'rbf' or 'fnn'"),
            (self.estimator in ("state", "dual"), "estimator must be 'state' or 'dual'"),
            (self.rom_solver in ("blackbox", "imposed"), "rom_solver must be 'blackbox' or 'imposed'"),
            (self.convection in ("central", "upwind"), "convection must be 'central' or 'upwind'"),
            (self.tol > 0 and self.rtol > 0 and self.atol > 0, "tolerances must be positive"),
            (self.tol_svd_t > 0 and self.tol_svd_p > 0, "SVD tolerances must be positive"),
            (0 < self.train_fraction <= 1, "train_fraction must lie in (0, 1]"),
            (self.r_c >= 1 and self.max_iter >= 1 and self.d_s >= 1, "r_c, max_iter, d_s must be positive"),
            (self.cells >= 8 and self.samples_per_axis >= 1, "cells >= 8 and samples_per_axis >= 1 required"),
            (self.epochs >= 1 and self.learning_rate > 0 and len(self.hidden) >= 1, "bad FNN settings"),
            (self.basis_size >= 1, "basis_size must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            TimeGrid(self.t0, self.tK, self.dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # derived objects
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.tK, self.dt)

    def solver(self) -> SolverConfig:
        return SolverConfig(rtol=self.rtol, atol=self.atol, max_steps=self.max_steps, method=self.method)

    def fnn(self) -> FnnHyper:
        return FnnHyper(hidden=tuple(self.hidden), epochs=self.epochs, learning_rate=self.learning_rate,
                        seed=self.seed)

    def model_options(self) -> dict:
        return {"convection": self.convection} if self.model == "burgers" else {}

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            attr, conv = SCHEMA[section][key]
            try:
                values[attr] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    names = {f.name for f in fields(ExperimentConfig)}
    assert set(values) <= names
    return ExperimentConfig(**values, source=text)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)
