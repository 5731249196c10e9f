"""Mesh sweeps, reference solutions and table output.

A run is described by a flat ``key = value`` text file, e.g.::

    problem = swe_constant
    meshes = 50, 100, 200, 400
    q_t = 2
    q_s = 2
    occurrences = 1, 2, 3
    truth = reference
    n_ref = 800
    output = out/swe_constant
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from filelock import FileLock

from .errors import (ConfigError, DegenerateDenominatorError, EventNotFoundError, InvalidArgumentError,
                     SingularMatrixError, SolverFailureError, UnsupportedError)
from .estimator import ReferenceTruth, estimate_event_error
from .event_qoi import find_crossings, functional_series
from .forward_solver import SpaceTimeSolution, TimePartition, forward_space, solve_forward
from .problems import CATALOG, GRAVITY, make_problem

__all__ = [
    "ExperimentConfig",
    "Reference",
    "TableRow",
    "build_reference",
    "load_config",
    "parse_config",
    "run",
    "run_mesh",
]

log = logging.getLogger(__name__)

CSV_FIELDS = ("N", "t_c", "e_Q", "nu", "rho_eff", "event", "error")
TRACE_PER_SLAB = 20
CACHE_MAGIC = "EVREF1"
HEADER_SIZE = 64
ROW_ERRORS = (DegenerateDenominatorError, EventNotFoundError, SolverFailureError,
              SingularMatrixError, UnsupportedError, InvalidArgumentError)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    meshes: tuple[int, ...]
    q_t: int
    q_s: int
    adjoint_offset: int = 2
    occurrences: tuple[int, ...] = (1,)
    truth: str = "analytic"  # analytic | reference | none
    n_ref: Optional[int] = None
    ref_degree: int = 3
    output: str = "out"
    emit_functional_trace: bool = False
    workers: int = 1
    gravity: float = GRAVITY

    def validate(self) -> None:
        if self.problem not in CATALOG:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if not self.meshes:
            raise ConfigError("meshes must not be empty")
        if any(n < 1 for n in self.meshes) or list(self.meshes) != sorted(set(self.meshes)):
            raise ConfigError("meshes must be positive and strictly ascending")
        if self.q_t < 1 or self.q_s < 1:
            raise ConfigError("q_t and q_s must be >= 1")
        if self.adjoint_offset < 1:
            raise ConfigError("adjoint_offset must be >= 1")
        if not self.occurrences or min(self.occurrences) < 1:
            raise ConfigError("occurrences must be positive integers")
        if self.truth not in ("analytic", "reference", "none"):
            raise ConfigError(f"truth must be analytic, reference or none, got {self.truth!r}")
        if self.truth == "reference":
            if self.n_ref is None:
                raise ConfigError("truth = reference requires n_ref")
            if self.n_ref < 2 * max(self.meshes):
                raise ConfigError(f"n_ref = {self.n_ref} must be at least twice the finest mesh")
        if self.ref_degree < 1:
            raise ConfigError("ref_degree must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.gravity > 0:
            raise ConfigError("gravity must be positive")


def _int_list(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


_PARSERS = {
    "problem": str,
    "meshes": _int_list,
    "q_t": int,
    "q_s": int,
    "adjoint_offset": int,
    "occurrence": _int_list,
    "occurrences": _int_list,
    "truth": str,
    "n_ref": int,
    "ref_degree": int,
    "output": str,
    "emit_functional_trace": _bool,
    "workers": int,
    "gravity": float,
}
_REQUIRED = ("problem", "meshes", "q_t", "q_s")


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        name = "occurrences" if key == "occurrence" else key
        if name in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[name] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    config = ExperimentConfig(**values)
    config.validate()
    return config


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


@dataclass(frozen=True)
class TableRow:
    N: int
    event: int
    t_c: Optional[float] = None
    e_Q: Optional[float] = None
    nu: Optional[float] = None
    rho_eff: Optional[float] = None
    error: str = ""
    report: dict = field(default_factory=dict, compare=False)

    @property
    def failed(self) -> bool:
        return bool(self.error)


# reference solutions ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Reference:
    solution: SpaceTimeSolution
    crossings: tuple[float, ...]
    path: Path
    loaded: bool
    warnings: tuple[str, ...] = ()

    def truth(self) -> ReferenceTruth:
        return ReferenceTruth(self.crossings)


def cache_dir(output: str | os.PathLike | None = None) -> Path:
    env = os.environ.get("ESTIMATE_CACHE_DIR")
    if env:
        return Path(env)
    return Path(output or ".") / "cache"


def cache_key(problem: str, n_ref: int, q: int, gravity: float) -> str:
    text = f"{problem}|N={n_ref}|q={q}|g={gravity!r}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _header(n_rows: int, n_dofs: int, n_cross: int, key: str) -> bytes:
    text = f"{CACHE_MAGIC} {n_rows} {n_dofs} {n_cross} {key}"
    if len(text) >= HEADER_SIZE:
        raise InvalidArgumentError("cache header overflow")
    return (text.ljust(HEADER_SIZE - 1) + "\n").encode("ascii")


def write_reference(path: Path, coeffs: np.ndarray, crossings, key: str) -> None:
    crossings = np.asarray(crossings, dtype="<f8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_header(coeffs.shape[0], coeffs.shape[1], len(crossings), key))
        fh.write(np.ascontiguousarray(coeffs, dtype="<f8").tobytes())
        fh.write(crossings.tobytes())
    os.replace(tmp, path)


def read_reference(path: Path, key: str, n_rows: int, n_dofs: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and crossings from a cache file; ValueError if it does not match."""
    blob = Path(path).read_bytes()
    if len(blob) < HEADER_SIZE:
        raise ValueError("truncated header")
    fields = blob[:HEADER_SIZE].decode("ascii", errors="replace").split()
    if len(fields) != 5 or fields[0] != CACHE_MAGIC:
        raise ValueError("bad magic")
    rows, dofs, n_cross = (int(f) for f in fields[1:4])
    if fields[4] != key or rows != n_rows or dofs != n_dofs:
        raise ValueError("key or size mismatch")
    expected = HEADER_SIZE + 8 * (rows * dofs + n_cross)
    if len(blob) != expected:
        raise ValueError(f"size {len(blob)} != {expected}")
    data = np.frombuffer(blob, dtype="<f8", offset=HEADER_SIZE)
    coeffs = data[:rows * dofs].reshape(rows, dofs).astype(float)
    crossings = data[rows * dofs:].astype(float)
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("non-finite coefficients")
    return coeffs, crossings


def build_reference(problem_name: str, n_ref: int, q: int = 3, gravity: float = GRAVITY,
                    directory: str | os.PathLike | None = None) -> Reference:
    """Fine cG(q, q) solution and its crossing list, cached on disk."""
    problem, event = make_problem(problem_name, gravity)
    directory = Path(directory) if directory is not None else cache_dir()
    directory.mkdir(parents=True, exist_ok=True)
    key = cache_key(problem_name, n_ref, q, gravity)
    path = directory / f"ref_{problem_name}_{n_ref}_q{q}_{key}.bin"
    space = forward_space(problem, n_ref, q)
    partition = TimePartition(0.0, problem.t_final, n_ref)
    notes = []
    with FileLock(str(path) + ".lock"):
        if path.exists():
            try:
                coeffs, crossings = read_reference(path, key, n_ref * q + 1, space.n_dofs)
                U = SpaceTimeSolution(space, partition.knots, q, coeffs)
                return Reference(U, tuple(float(c) for c in crossings), path, True)
            except (OSError, ValueError) as exc:
                msg = f"corrupt reference cache {path.name} ({exc}); recomputing"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                notes.append(msg)
        log.info("building reference %s N=%d q=%d", problem_name, n_ref, q)
        U = solve_forward(problem, space, partition, q)
        crossings = [c.time for c in find_crossings(functional_series(U, event), event.threshold, event.tau)]
        write_reference(path, U.coeffs, crossings, key)
    return Reference(U, tuple(crossings), path, False, tuple(notes))


# sweeps -------------------------------------------------------------------

def run_mesh(config: ExperimentConfig, N: int, truth=None) -> list[TableRow]:
    """Rows of one mesh; module errors are recorded per row, not raised."""
    problem, event = make_problem(config.problem, config.gravity)
    if truth is None and config.truth == "analytic":
        truth = "analytic"
    try:
        U = solve_forward(problem, forward_space(problem, N, config.q_s),
                          TimePartition(0.0, problem.t_final, N), config.q_t)
    except ROW_ERRORS as exc:
        return [TableRow(N, n, error=f"{type(exc).__name__}: {exc}") for n in config.occurrences]
    if config.emit_functional_trace:
        _write_trace(Path(config.output) / f"trace_{N}.csv", functional_series(U, event))
    rows = []
    for n in config.occurrences:
        try:
            r = estimate_event_error(problem, event, U, truth, occurrence=n,
                                     degree_offset=config.adjoint_offset)
        except ROW_ERRORS as exc:
            rows.append(TableRow(N, n, error=f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(TableRow(N, n, r.t_c, r.e_Q, r.nu, r.rho_eff, report=r.to_record()))
    return rows


def _run_mesh_star(args):
    return run_mesh(*args)


def _write_trace(path: Path, series) -> None:
    t, g = series.sample(TRACE_PER_SLAB)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("t", "G"))
        writer.writerows((repr(float(a)), repr(float(b))) for a, b in zip(t, g))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _fmt6(value) -> str:
    return "" if value is None else f"{value:.6g}"


def write_tables(rows: list[TableRow], output: Path) -> None:
    output.mkdir(parents=True, exist_ok=True)
    with open(output / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in rows:
            writer.writerow([_fmt(getattr(r, k)) for k in CSV_FIELDS])
    lines = ["| N | event | t_c | e_Q | nu | rho_eff | error |", "|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.N} | {r.event} | {_fmt6(r.t_c)} | {_fmt6(r.e_Q)} | {_fmt6(r.nu)} "
                     f"| {_fmt6(r.rho_eff)} | {r.error} |")
    (output / "table.md").write_text("\n".join(lines) + "\n")
    reports = output / "reports"
    reports.mkdir(exist_ok=True)
    for r in rows:
        record = {"N": r.N, "event": r.event, "error": r.error, **r.report}
        (reports / f"report_N{r.N}_event{r.event}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def run(config: ExperimentConfig) -> list[TableRow]:
    """Run the sweep and write ``table.csv``, ``table.md``, reports and traces."""
    config.validate()
    output = Path(config.output)
    output.mkdir(parents=True, exist_ok=True)
    truth = None
    if config.truth == "reference":
        ref = build_reference(config.problem, config.n_ref, config.ref_degree, config.gravity,
                              cache_dir(output))
        truth = ref.truth()
    jobs = [(config, N, truth) for N in config.meshes]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            per_mesh = list(pool.map(_run_mesh_star, jobs))
    else:
        per_mesh = [run_mesh(*job) for job in jobs]
    rows = [row for chunk in per_mesh for row in chunk]
    write_tables(rows, output)
    return rows


def with_output(config: ExperimentConfig, output) -> ExperimentConfig:
    return replace(config, output=str(output))
