"""Optical coefficients, sources, and the attenuation factor along segments."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .discretization import CollocationGrid

Field = Callable[[np.ndarray], np.ndarray]

CONSTANT = "constant"
GRID = "grid-sampled"
ANALYTIC = "analytic-callable"


class AssumptionError(ValueError):
    """Coefficients violate the contraction assumption sup(sigma_s/sigma_t) < 1."""


def _constant_field(value: float) -> Field:
    def f(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], value)

    return f


@dataclass(frozen=True)
class MediumModel:
    """Total and scattering coefficients on the unit square.

    ``sigma_t`` and ``sigma_s`` are vectorized callables taking ``(..., 2)``
    coordinate arrays. ``path_step`` is the trapezoid step used for path
    integrals of a non-constant ``sigma_t``.
    """

    sigma_t: Field
    sigma_s: Field
    kind: str
    path_step: float = 1.0 / 96
    sigma_t_value: float | None = None
    sigma_s_value: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def constant(cls, sigma_t: float, sigma_s: float) -> "MediumModel":
        return cls(
            sigma_t=_constant_field(sigma_t),
            sigma_s=_constant_field(sigma_s),
            kind=CONSTANT,
            sigma_t_value=float(sigma_t),
            sigma_s_value=float(sigma_s),
        )

    @classmethod
    def from_callables(cls, sigma_t: Field, sigma_s: Field, path_step: float = 1.0 / 96):
        return cls(sigma_t=sigma_t, sigma_s=sigma_s, kind=ANALYTIC, path_step=path_step)

    @classmethod
    def from_grid(cls, grid: CollocationGrid, sigma_t, sigma_s) -> "MediumModel":
        """Bilinear interpolation of values sampled at the collocation points.

        Outside the hull of the centroids the nearest edge value is used.
        """
        m = grid.m
        st = np.asarray(sigma_t, dtype=float).reshape(m, m)
        ss = np.asarray(sigma_s, dtype=float).reshape(m, m)
        axis = (np.arange(m) + 0.5) * grid.cell_size
        lo, hi = axis[0], axis[-1]

        def make(values):
            # values[j, i] with j the y index
            interp = RegularGridInterpolator((axis, axis), values.T, method="linear")

            def f(x):
                x = np.asarray(x, dtype=float)
                flat = np.clip(x.reshape(-1, 2), lo, hi)
                return interp(flat).reshape(x.shape[:-1])

            return f

        return cls(
            sigma_t=make(st), sigma_s=make(ss), kind=GRID, path_step=grid.cell_size / 2
        )

    @property
    def is_constant(self) -> bool:
        return self.kind == CONSTANT

    def sigma_s_at(self, grid: CollocationGrid) -> np.ndarray:
        key = ("sigma_s", grid.m)
        if key not in self._cache:
            self._cache[key] = np.asarray(self.sigma_s(grid.points), dtype=float)
        return self._cache[key]

    def sigma_t_at(self, grid: CollocationGrid) -> np.ndarray:
        key = ("sigma_t", grid.m)
        if key not in self._cache:
            self._cache[key] = np.asarray(self.sigma_t(grid.points), dtype=float)
        return self._cache[key]


def attenuation(x, y, medium: MediumModel, step: float | None = None) -> float:
    """exp(-integral of sigma_t along the segment from x to y)."""
    x = np.asarray(x, dtype=float).reshape(1, 2)
    y = np.asarray(y, dtype=float).reshape(1, 2)
    return float(attenuation_pairs(x, y, medium, step)[0])


def attenuation_pairs(x, y, medium: MediumModel, step: float | None = None) -> np.ndarray:
    """Vectorized attenuation for arrays of point pairs of shape ``(K, 2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.hypot(*(x - y).T)
    if medium.is_constant:
        return np.exp(-medium.sigma_t_value * d)
    return np.exp(-optical_depth_pairs(x, y, d, medium, step))


def optical_depth_pairs(x, y, d, medium: MediumModel, step: float | None = None) -> np.ndarray:
    """Composite trapezoid line integral of sigma_t, grouped by interval count."""
    step = medium.path_step if step is None else step
    nint = np.maximum(1, np.ceil(d / step - 1e-12).astype(np.int64))
    nint[d == 0] = 0
    tau = np.zeros(len(d))
    for n in np.unique(nint):
        if n == 0:
            continue
        sel = np.flatnonzero(nint == n)
        s = np.linspace(0.0, 1.0, n + 1)
        seg = x[sel, None, :] + s[None, :, None] * (y[sel] - x[sel])[:, None, :]
        vals = medium.sigma_t(seg)
        w = np.full(n + 1, 1.0)
        w[0] = w[-1] = 0.5
        tau[sel] = (vals @ w) * d[sel] / n
    return tau


# ----------------------------------------------------------------------------
# sources


@dataclass(frozen=True)
class SourceModel:
    """Isotropic source f(t, x), extended by zero to negative times."""

    func: Callable[[float, np.ndarray], np.ndarray]
    name: str = "custom"

    def __call__(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if t < 0:
            return np.zeros(x.shape[:-1])
        return np.asarray(self.func(t, x), dtype=float)


def _benchmark(t, x):
    cx = 0.5 + 0.2 * np.cos(4 * np.pi * t)
    cy = 0.5 + 0.2 * np.sin(4 * np.pi * t)
    r2 = (x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2
    return 4.0 * t * t * np.exp(-40.0 * r2)


def benchmark_source() -> SourceModel:
    """Gaussian spot of growing strength circling the centre of the square twice."""
    return SourceModel(_benchmark, name="benchmark")


def zero_source() -> SourceModel:
    return SourceModel(lambda t, x: np.zeros(np.asarray(x).shape[:-1]), name="zero")


SOURCES = {"benchmark": benchmark_source, "zero": zero_source}


def source_eval(t: float, x, source: SourceModel):
    out = source(t, x)
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class AssumptionReport:
    k0: float
    c_lower: float
    c_upper: float
    ok: bool
    message: str = ""

    def raise_if_failed(self):
        if not self.ok:
            raise AssumptionError(self.message)


def validate_assumptions(medium: MediumModel, grid: CollocationGrid) -> AssumptionReport:
    st = medium.sigma_t_at(grid)
    ss = medium.sigma_s_at(grid)
    bad = np.flatnonzero(~(np.isfinite(st) & np.isfinite(ss)))
    if bad.size:
        return AssumptionReport(np.nan, np.nan, np.nan, False,
                                f"non-finite coefficient at collocation point {bad[0]}")
    c_lower, c_upper = float(ss.min()), float(ss.max())
    if np.any(st <= 0):
        p = int(np.flatnonzero(st <= 0)[0])
        return AssumptionReport(np.nan, c_lower, c_upper, False,
                                f"sigma_t <= 0 at collocation point {p}")
    k0 = float(np.max(ss / st))
    if c_lower < 0:
        p = int(np.argmin(ss))
        return AssumptionReport(k0, c_lower, c_upper, False,
                                f"sigma_s < 0 at collocation point {p}")
    if k0 >= 1:
        p = int(np.argmax(ss / st))
        return AssumptionReport(k0, c_lower, c_upper, False,
                                f"sup sigma_s/sigma_t = {k0:.6g} >= 1 (at point {p}); "
                                "the scattering operator is not a contraction")
    return AssumptionReport(k0, c_lower, c_upper, True, "ok")


def load_medium_csv(path, grid: CollocationGrid) -> MediumModel:
    """Read ``i,j,sigma_t,sigma_s`` rows (one per cell) into a grid-sampled medium."""
    st = np.full(grid.M, np.nan)
    ss = np.full(grid.M, np.nan)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["i", "j", "sigma_t", "sigma_s"]:
            raise ValueError(f"{path}: expected header i,j,sigma_t,sigma_s, got {reader.fieldnames}")
        for row in reader:
            i, j = int(row["i"]), int(row["j"])
            if not (0 <= i < grid.m and 0 <= j < grid.m):
                raise ValueError(f"{path}: cell ({i},{j}) outside a {grid.m}x{grid.m} grid")
            p = j * grid.m + i
            st[p] = float(row["sigma_t"])
            ss[p] = float(row["sigma_s"])
    if np.isnan(st).any():
        missing = int(np.flatnonzero(np.isnan(st))[0])
        raise ValueError(f"{path}: no row for cell index {missing}")
    return MediumModel.from_grid(grid, st, ss)


def write_medium_csv(path, grid: CollocationGrid, sigma_t, sigma_s):
    st = np.broadcast_to(np.asarray(sigma_t, dtype=float), (grid.M,))
    ss = np.broadcast_to(np.asarray(sigma_s, dtype=float), (grid.M,))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "sigma_t", "sigma_s"])
        for p in range(grid.M):
            w.writerow([p % grid.m, p // grid.m, repr(float(st[p])), repr(float(ss[p]))])
