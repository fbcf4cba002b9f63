"""Artifact formats: binary matrices, defect tensor manifests, CSV tables and JSON.

Binary matrix files hold a 16-byte header (two little-endian ``uint64``
values ``N`` and ``N_t``) followed by ``N * N_t`` little-endian ``float64``
values in column-major order.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .closure.defect import DefectTensor
from .models import TimeGrid
from .timestepping import ImexScheme

__all__ = [
    "FormatError",
    "write_matrix",
    "read_matrix",
    "write_defect_tensor",
    "read_defect_tensor",
    "format_number",
    "write_csv",
    "read_csv",
    "config_hash",
    "greedy_result_dict",
    "write_greedy_result",
    "ArtifactStage",
]

_HEADER = np.dtype("<u8")
_VALUES = np.dtype("<f8")


class FormatError(ValueError):
    """Malformed artifact file."""


# binary matrices ==============================================================


def write_matrix(path, M) -> None:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {M.shape}")
    with open(path, "wb") as fh:
        fh.write(np.array(M.shape, dtype=_HEADER).tobytes())
        fh.write(np.asfortranarray(M).astype(_VALUES).tobytes(order="F"))


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    n, m = (int(v) for v in np.frombuffer(raw[:16], dtype=_HEADER))
    if len(raw) != 16 + 8 * n * m:
        raise FormatError(f"{path}: expected {n}x{m} payload, file has {len(raw) - 16} bytes")
    return np.frombuffer(raw[16:], dtype=_VALUES).reshape((n, m), order="F").copy()


# defect tensors ===============================================================


def write_defect_tensor(directory, tensor: DefectTensor, stem: str = "defect") -> Path:
    """Manifest ``<stem>.json`` plus one ``<stem>_<i>.bin`` matrix per parameter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(tensor.n_samples):
        name = f"{stem}_{i:04d}.bin"
        write_matrix(directory / name, tensor.slice(i))
        files.append(name)
    g = tensor.grid
    manifest = {
        "params": tensor.params.tolist(),
        "grid": {"t0": g.t0, "tK": g.tK, "dt": g.dt},
        "scheme": tensor.scheme.name,
        "order": tensor.scheme.order,
        "files": files,
    }
    path = directory / f"{stem}.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def read_defect_tensor(manifest_path) -> DefectTensor:
    manifest_path = Path(manifest_path)
    try:
        meta = json.loads(manifest_path.read_text())
        grid = TimeGrid(**meta["grid"])
        scheme = ImexScheme(int(meta["order"]))
        slices = [read_matrix(manifest_path.parent / f) for f in meta["files"]]
        params = np.asarray(meta["params"], dtype=float)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{manifest_path}: bad manifest ({exc})") from exc
    return DefectTensor(np.stack(slices, axis=2), params, grid, scheme)


# CSV ==========================================================================


def format_number(v) -> str:
    """Shortest round-trip text for floats; integers and strings unchanged."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], cfg_hash: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} entries, header has {len(columns)}")
            fh.write(",".join(format_number(v) for v in row) + "\n")


def read_csv(path) -> tuple:
    """Return ``(comment, columns, rows)`` with numeric cells parsed as floats."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("#"):
        raise FormatError(f"{path}: missing comment line")
    columns = lines[1].split(",")
    rows = []
    for line in lines[2:]:
        cells = []
        for c in line.split(","):
            try:
                cells.append(float(c))
            except ValueError:
                cells.append(c)
        rows.append(cells)
    return lines[0][1:].strip(), columns, rows


# greedy results ===============================================================


def greedy_result_dict(result) -> dict:
    return {
        "algorithm": result.algorithm,
        "converged": result.converged,
        "scheme": result.scheme.name,
        "n": result.basis.n,
        "n_deim": None if result.deim is None else int(result.deim.U.shape[1]),
        "n_d": None if result.closure is None else result.closure.n_d,
        "rho_bar": result.rho_bar,
        "history": [
            {
                "iteration": r.iteration,
                "p_star": list(map(float, r.p_star)),
                "epsilon": r.epsilon,
                "n": r.n,
                "n_deim": r.n_deim,
                "rho_bar": r.rho_bar,
                "wall_time": r.wall_time,
            }
            for r in result.records
        ],
    }


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def write_greedy_result(directory, result, stem: str = "greedy") -> None:
    directory = Path(directory)
    payload = greedy_result_dict(result)
    (directory / f"{stem}.json").write_text(json.dumps(payload, indent=2, default=_json_default))
    write_matrix(directory / f"{stem}_basis.bin", result.basis.V)


# atomic output ================================================================


class ArtifactStage:
    """Stage files in a temporary directory and move them to ``out`` on success.

    Used as a context manager; on an exception nothing reaches ``out``.
    """

    def __init__(self, out):
        self.out = Path(out)
        self.path: Path | None = None

    def __enter__(self) -> Path:
        parent = self.out.parent if self.out.parent.exists() else Path(tempfile.gettempdir())
        self.path = Path(tempfile.mkdtemp(prefix=".stage-", dir=parent))
        return self.path

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.out.mkdir(parents=True, exist_ok=True)
                for src in sorted(self.path.rglob("*")):
                    if src.is_file():
                        dst = self.out / src.relative_to(self.path)
                        dst.parent.mkdir(parents=True, exist_ok=True)
                        shutil.move(str(src), str(dst))
        finally:
            shutil.rmtree(self.path, ignore_errors=True)
        return False


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
