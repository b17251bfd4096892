"""Uniform grids on [0, 1], grid functions and the plain (non-fractional) calculus on them.

Two layouts appear throughout the package:

* node values, one per grid node ``t_i = i / (n - 1)`` (this is what :class:`GridFn` holds);
* cell values, one per cell ``[t_i, t_{i+1}]``, understood as a piecewise-constant
  function. Densities such as velocities' derivatives live there.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import InvalidArgument

#: size above which :func:`holder_seminorm` switches to dyadic lags in ``mode="auto"``
EXACT_HOLDER_MAX_N = 8192


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with ``n`` nodes on [0, 1]."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidArgument(f"a grid needs at least 2 nodes, got n={self.n}")

    @property
    def dt(self) -> float:
        return 1.0 / (self.n - 1)

    @cached_property
    def t(self) -> np.ndarray:
        t = np.arange(self.n) * self.dt
        t[-1] = 1.0
        t.flags.writeable = False
        return t

    @cached_property
    def midpoints(self) -> np.ndarray:
        m = (np.arange(self.n - 1) + 0.5) * self.dt
        m.flags.writeable = False
        return m

    def sample(self, func: Callable[[np.ndarray], np.ndarray]) -> "GridFn":
        values = np.broadcast_to(np.asarray(func(self.t), dtype=float), (self.n,))
        return GridFn(self, values)


def make_grid(n: int) -> TimeGrid:
    return TimeGrid(n)


@dataclass(frozen=True, eq=False)
class GridFn:
    """Real values sampled at the nodes of a :class:`TimeGrid`."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n,):
            raise InvalidArgument(
                f"expected {self.grid.n} values, got array of shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("grid function values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    def __len__(self):
        return self.grid.n

    def __call__(self, i):
        return self.values[i]

    def _other(self, other):
        if isinstance(other, GridFn):
            if other.grid != self.grid:
                raise InvalidArgument("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return GridFn(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFn(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return GridFn(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return GridFn(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridFn(self.grid, self.values / self._other(other))

    def __neg__(self):
        return GridFn(self.grid, -self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_cells(self) -> np.ndarray:
        """Cell averages of the piecewise-linear interpolant."""
        return node_to_cell(self.values)


def node_to_cell(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return 0.5 * (values[..., 1:] + values[..., :-1])


def cell_to_node(cells: np.ndarray) -> np.ndarray:
    """Interpolate cell-midpoint values back to nodes (linear, extrapolated at the ends)."""
    cells = np.asarray(cells, dtype=float)
    m = cells.shape[-1]
    out = np.empty(cells.shape[:-1] + (m + 1,))
    if m == 1:
        out[..., 0] = out[..., 1] = cells[..., 0]
        return out
    out[..., 1:-1] = 0.5 * (cells[..., 1:] + cells[..., :-1])
    out[..., 0] = 1.5 * cells[..., 0] - 0.5 * cells[..., 1]
    out[..., -1] = 1.5 * cells[..., -1] - 0.5 * cells[..., -2]
    return out


def cumulative_integral(f: GridFn) -> GridFn:
    """Trapezoid-rule antiderivative, zero at t = 0."""
    return GridFn(f.grid, cumulative_trapezoid(f.values, dx=f.grid.dt, initial=0.0))


def integrate(f: GridFn) -> float:
    return float(np.trapezoid(f.values, dx=f.grid.dt))


def derivative(f: GridFn) -> GridFn:
    """Second-order finite differences (central inside, one-sided at the ends)."""
    if f.grid.n < 3:
        raise InvalidArgument("derivative needs at least 3 nodes")
    return GridFn(f.grid, np.gradient(f.values, f.grid.dt, edge_order=2))


class HolderEstimate(NamedTuple):
    value: float
    approximate: bool


def _check_beta(beta: float, upper_inclusive: bool = True):
    ok = 0 < beta <= 1 if upper_inclusive else 0 < beta < 1
    if not ok:
        raise InvalidArgument(f"Hölder exponent must lie in (0, 1], got {beta}")


def _lags(n: int, dyadic: bool) -> np.ndarray:
    if not dyadic:
        return np.arange(1, n)
    lags = 2 ** np.arange(int(np.log2(n - 1)) + 1)
    return np.unique(np.append(lags[lags < n], n - 1))


def holder_seminorms(values: np.ndarray, dt: float, beta: float, *,
                     dyadic: bool = False, threshold: float | None = None) -> np.ndarray:
    """Discrete Hölder seminorm along the last axis of ``values``.

    With ``threshold`` set, rows whose running maximum already exceeds it stop being
    scanned; their returned value is then only a lower bound (still above ``threshold``),
    which is all a tube-membership test needs.
    """
    _check_beta(beta)
    values = np.asarray(values, dtype=float)
    squeeze = values.ndim == 1
    v = np.atleast_2d(values)
    n = v.shape[-1]
    best = np.zeros(v.shape[0])
    active = np.arange(v.shape[0])
    for k in _lags(n, dyadic):
        if active.size == 0:
            break
        rows = v[active]
        inc = np.max(np.abs(rows[:, k:] - rows[:, :-k]), axis=1) / (k * dt) ** beta
        best[active] = np.maximum(best[active], inc)
        if threshold is not None:
            active = active[best[active] <= threshold]
    return best[0] if squeeze else best


def holder_seminorm_report(f: GridFn, beta: float, mode: str = "auto") -> HolderEstimate:
    if mode not in ("auto", "exact", "dyadic"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    dyadic = mode == "dyadic" or (mode == "auto" and f.grid.n > EXACT_HOLDER_MAX_N)
    return HolderEstimate(float(holder_seminorms(f.values, f.grid.dt, beta, dyadic=dyadic)), dyadic)


def holder_seminorm(f: GridFn, beta: float, mode: str = "auto") -> float:
    """max over node pairs of |f(t_j) - f(t_i)| / (t_j - t_i)**beta.

    Exact O(n^2) scan unless ``mode="dyadic"`` (or ``"auto"`` on very fine grids), in
    which case only power-of-two lags are scanned; :func:`holder_seminorm_report`
    says which one was used.
    """
    return holder_seminorm_report(f, beta, mode).value


def holder_norm_shifted(f: GridFn, beta: float, mode: str = "auto") -> float:
    """Norm of C_0^beta for 1 < beta < 2, i.e. the (beta - 1)-seminorm of f'."""
    if not 1 < beta < 2:
        raise InvalidArgument(f"shifted Hölder exponent must lie in (1, 2), got {beta}")
    return holder_seminorm(derivative(f), beta - 1, mode)


# --- CSV ---------------------------------------------------------------------

def write_columns(path: str | Path, header: list[str], columns: list[np.ndarray]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([f"{float(x):.17g}" for x in row])


def read_columns(path: str | Path) -> tuple[list[str], list[np.ndarray]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, [data[:, k] for k in range(len(header))]


def write_gridfn_csv(f: GridFn, path: str | Path):
    write_columns(path, ["t", "value"], [f.t, f.values])


def read_gridfn_csv(path: str | Path) -> GridFn:
    header, (t, values) = read_columns(path)
    if header != ["t", "value"]:
        raise InvalidArgument(f"unexpected header {header}")
    grid = TimeGrid(len(t))
    if not np.allclose(t, grid.t, rtol=0, atol=1e-14):
        raise InvalidArgument("CSV nodes are not a uniform grid on [0, 1]")
    return GridFn(grid, values)


# --- fourth-order stencils -----------------------------------------------------

_D1_EDGE = np.array([[-25, 48, -36, 16, -3], [-3, -10, 18, -6, 1]], dtype=float) / 12
_D2_EDGE = np.array([[35, -104, 114, -56, 11], [11, -20, 6, 4, -1]], dtype=float) / 12


def stencil_derivatives(values: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives along the last axis from five-point stencils.

    Fourth order inside; the two nodes at each end use one-sided five-point rules.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[-1] < 5:
        raise InvalidArgument("five-point stencils need at least 5 nodes")
    d1 = np.empty_like(v)
    d2 = np.empty_like(v)
    m2, m1, p1, p2 = v[..., :-4], v[..., 1:-3], v[..., 3:-1], v[..., 4:]
    c = v[..., 2:-2]
    d1[..., 2:-2] = (m2 - 8 * m1 + 8 * p1 - p2) / (12 * dt)
    d2[..., 2:-2] = (-m2 + 16 * m1 - 30 * c + 16 * p1 - p2) / (12 * dt**2)
    head, tail = v[..., :5], v[..., -5:][..., ::-1]
    for k in range(2):
        d1[..., k] = head @ _D1_EDGE[k] / dt
        d1[..., -1 - k] = -(tail @ _D1_EDGE[k]) / dt
        d2[..., k] = head @ _D2_EDGE[k] / dt**2
        d2[..., -1 - k] = tail @ _D2_EDGE[k] / dt**2
    return d1, d2
