"""Run configuration: flat key=value files with command-line overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .discretization import CollocationGrid, TimeGrid, build_time_grid, grid_from_points
from .medium import SOURCES, MediumModel, SourceModel, load_medium_csv

THREADS_ENV = "RTETREE_THREADS"
SOLVERS = ("direct", "treecode", "both")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_str(text: str):
    return None if text.strip().lower() in ("", "none") else text.strip()


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None


@dataclass(frozen=True)
class RunConfig:
    """Parameters of a run. List-valued fields drive the experiment sweeps."""

    M: tuple = (576,)
    h: float | None = None  # defaults to the cell size
    T: float = 1.0
    sigma_t: float = 5.2
    sigma_s: float = 5.0
    medium_csv: str | None = None
    source: str = "benchmark"
    solver: str = "both"
    theta: tuple = (0.3,)
    n: tuple = (6,)
    leaf_cap: int = 64
    levels: tuple = (1, 2, 3, 4)
    iterative: bool = False
    all_levels: bool = False
    deterministic: bool = False
    threads: int = 1
    out: str = "out"

    # ------------------------------------------------------------------
    def validate(self) -> "RunConfig":
        if not self.M:
            raise ConfigError("M list is empty")
        for M in self.M:
            m = round(M ** 0.5)
            if M < 4 or m * m != M:
                raise ConfigError(f"M = {M} must be a perfect square >= 4")
        for th in self.theta:
            if not 0 <= th < 1:
                raise ConfigError(f"theta = {th} must lie in [0, 1)")
        for n in self.n:
            if n < 2:
                raise ConfigError(f"Chebyshev order n = {n} must be >= 2")
        if self.leaf_cap < 1:
            raise ConfigError("leaf capacity must be >= 1")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown source {self.source!r}; choose from {sorted(SOURCES)}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.T <= 0:
            raise ConfigError("horizon T must be positive")
        if self.h is not None and not self.iterative:
            finest = 1.0 / round(max(self.M) ** 0.5)
            if self.h > finest * (1 + 1e-12):
                raise ConfigError(f"h = {self.h} exceeds the cell size {finest:.6g}; "
                                  "set iterative=true")
        if self.medium_csv is not None and not os.access(self.medium_csv, os.R_OK):
            raise ConfigError(f"medium file {self.medium_csv} is not readable")
        out = Path(self.out)
        parent = out if out.exists() else out.parent
        if not os.access(parent if str(parent) else ".", os.W_OK):
            raise ConfigError(f"output path {self.out} is not writable")
        return self

    def single_M(self) -> int:
        if len(self.M) != 1:
            raise ConfigError(f"expected a single M, got {self.M}")
        return self.M[0]

    def grid(self, M: int | None = None) -> CollocationGrid:
        return grid_from_points(self.single_M() if M is None else M)

    def time_grid(self, grid: CollocationGrid) -> TimeGrid:
        try:
            return build_time_grid(self.T, self.h or grid.cell_size)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def medium(self, grid: CollocationGrid) -> MediumModel:
        if self.medium_csv:
            return load_medium_csv(self.medium_csv, grid)
        return MediumModel.constant(self.sigma_t, self.sigma_s)

    def source_model(self) -> SourceModel:
        return SOURCES[self.source]()

    def as_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            out.append(f"{f.name}={'' if v is None else v}")
        return out


_PARSERS = {
    "M": _ints,
    "h": _opt_float,
    "T": float,
    "sigma_t": float,
    "sigma_s": float,
    "medium_csv": _opt_str,
    "source": str.strip,
    "solver": str.strip,
    "theta": _floats,
    "n": _ints,
    "leaf_cap": int,
    "levels": _ints,
    "iterative": _bool,
    "all_levels": _bool,
    "deterministic": _bool,
    "threads": int,
    "out": str.strip,
}

_ALIASES = {"cheb_order": "n", "leaf_capacity": "leaf_cap", "ell": None}


def parse_assignments(lines, origin: str = "<config>") -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "ell":
            try:
                m = round(1.0 / float(val))
            except (ValueError, ZeroDivisionError):
                raise ConfigError(f"{origin}:{lineno}: bad cell size {val!r}") from None
            if abs(1.0 / float(val) - m) > 1e-9:
                raise ConfigError(f"{origin}:{lineno}: 1/ell is not an integer; "
                                  f"nearest valid cell size is 1/{m}")
            key, val = "M", str(m * m)
        key = _ALIASES.get(key, key) or key
        if key not in _PARSERS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"{origin}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {"threads": default_threads()}
    if path is not None:
        try:
            text = Path(path).read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_assignments(text, origin=str(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return replace(RunConfig(), **values).validate()
