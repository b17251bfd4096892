"""Riemann-Liouville fractional integrals and derivatives on a uniform grid.

Everything is built from one primitive: the exact left Riemann-Liouville integral of a
piecewise-constant function, evaluated at the nodes. With cell values ``u_j`` on
``[t_j, t_{j+1}]``

    I^a u (t_i) = dt^a / Gamma(a + 1) * sum_{j < i} ((i - j)^a - (i - j - 1)^a) u_j,

a lower-triangular Toeplitz map. Derived operators:

* node integral   -- cell averages of the node data, then the map above;
* node derivative -- the Weyl formula applied to the piecewise-linear interpolant
  (f_0 t^-a / Gamma(1 - a) plus I^(1-a) of the cell slopes);
* cell integral / cell derivative -- exact cell averages of I^a u and of
  D^a u = d/dt I^(1-a) u for piecewise-constant u.

Right-sided (1-) operators are obtained by reflecting t -> 1 - t.
Power weights s^p are always evaluated at cell midpoints, never at s = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gamma

import numpy as np
from scipy.signal import fftconvolve

from .errors import InvalidArgument, NumericalFailure, first_nonfinite
from .grid import GridFn, TimeGrid, node_to_cell

LEFT = "left"
RIGHT = "right"
INTEGRAL = "integral"
DERIVATIVE = "derivative"

# below this size a dense product beats the FFT and is bit-for-bit linear
_DENSE_MAX = 256


def _check_order(alpha: float, kind: str):
    if kind == INTEGRAL:
        if not 0 < alpha <= 1:
            raise InvalidArgument(f"integral order must lie in (0, 1], got {alpha}")
    elif kind == DERIVATIVE:
        if not 0 < alpha < 1:
            raise InvalidArgument(f"derivative order must lie in (0, 1), got {alpha}")
    else:
        raise InvalidArgument(f"unknown operator kind {kind!r}")


def _check_orientation(orientation: str):
    if orientation not in (LEFT, RIGHT):
        raise InvalidArgument(f"orientation must be 'left' or 'right', got {orientation!r}")


@lru_cache(maxsize=64)
def _weights(name: str, m: int, alpha: float) -> np.ndarray:
    """Generating column of a lower-triangular Toeplitz map (without its dt power).

    node:  weight of cell j at node j + k, k = 1..m (exact RL integral of a step)
    cint:  cell averages of I^a u for piecewise-constant u
    cder:  cell averages of D^a u = d/dt I^(1-a) u for piecewise-constant u
    """
    if name == "node":
        k = np.arange(1, m + 1, dtype=float)
        w = (k**alpha - (k - 1) ** alpha) / gamma(alpha + 1)
    else:
        k = np.arange(m, dtype=float)
        b = alpha + 1 if name == "cint" else 1 - alpha
        w = (k + 1) ** b - 2 * k**b + np.where(k > 0, np.abs(k - 1) ** b, 0.0)
        w /= gamma(alpha + 2) if name == "cint" else gamma(2 - alpha)
    w.flags.writeable = False
    return w


@lru_cache(maxsize=32)
def _dense(name: str, m: int, alpha: float) -> np.ndarray:
    w = _weights(name, m, alpha)
    idx = np.subtract.outer(np.arange(m), np.arange(m))
    mat = np.where(idx >= 0, w[np.clip(idx, 0, None)], 0.0)
    mat = np.ascontiguousarray(mat.T)
    mat.flags.writeable = False
    return mat


def _causal(u: np.ndarray, name: str, alpha: float) -> np.ndarray:
    """out[..., i] = sum_{j <= i} w[i - j] u[..., j]."""
    m = u.shape[-1]
    if m <= _DENSE_MAX:
        return u @ _dense(name, m, alpha)
    w = _weights(name, m, alpha)
    shape = (1,) * (u.ndim - 1) + (m,)
    return fftconvolve(u, w.reshape(shape), axes=-1)[..., :m]


def _flip(x: np.ndarray) -> np.ndarray:
    return x[..., ::-1]


# --- cell-level operators (used by the K_H machinery) --------------------------

def cell_to_node_integral(u: np.ndarray, alpha: float, dt: float) -> np.ndarray:
    """Left I^a of piecewise-constant cell data, evaluated at the n = m + 1 nodes."""
    u = np.asarray(u, dtype=float)
    m = u.shape[-1]
    if alpha == 1:
        inner = np.cumsum(u, axis=-1) * dt
    else:
        inner = _causal(u, "node", float(alpha)) * dt**alpha
    out = np.zeros(u.shape[:-1] + (m + 1,))
    out[..., 1:] = inner
    return out


def cell_integral(u: np.ndarray, alpha: float, dt: float, orientation: str = LEFT) -> np.ndarray:
    """Cell averages of I^a u for piecewise-constant u."""
    u = np.asarray(u, dtype=float)
    if orientation == RIGHT:
        return _flip(cell_integral(_flip(u), alpha, dt))
    return _causal(u, "cint", float(alpha)) * dt**alpha


def cell_derivative(u: np.ndarray, alpha: float, dt: float, orientation: str = LEFT) -> np.ndarray:
    """Cell averages of D^a u = d/dt I^(1-a) u for piecewise-constant u."""
    u = np.asarray(u, dtype=float)
    if orientation == RIGHT:
        return _flip(cell_derivative(_flip(u), alpha, dt))
    return _causal(u, "cder", float(alpha)) * dt ** (-alpha)


# --- node-level operators ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FracOperatorPlan:
    """Precomputed quadrature for one (grid, order, orientation, kind).

    The operator is a triangular Toeplitz map; only its generating column is stored.
    :meth:`matrix` materializes the full weight matrix acting on node values.
    """

    grid: TimeGrid
    alpha: float
    orientation: str
    kind: str

    def __post_init__(self):
        _check_order(self.alpha, self.kind)
        _check_orientation(self.orientation)

    def _left(self, values: np.ndarray) -> np.ndarray:
        dt = self.grid.dt
        if self.kind == INTEGRAL:
            return cell_to_node_integral(node_to_cell(values), self.alpha, dt)
        a = self.alpha
        slopes = np.diff(values, axis=-1) / dt
        out = cell_to_node_integral(slopes, 1 - a, dt)
        t = self.grid.t
        out[..., 1:] += values[..., :1] * t[1:] ** (-a) / gamma(1 - a)
        out[..., 0] = out[..., 1]
        return out

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if self.orientation == RIGHT:
            return _flip(self._left(_flip(values)))
        return self._left(values)

    def __call__(self, f: GridFn) -> GridFn:
        if f.grid != self.grid:
            raise InvalidArgument("plan and function live on different grids")
        out = self.apply_values(f.values)
        bad = first_nonfinite(out)
        if bad is not None:
            raise NumericalFailure("fractional operator produced non-finite values", bad)
        return GridFn(self.grid, out)

    def matrix(self) -> np.ndarray:
        return self.apply_values(np.eye(self.grid.n)).T


@lru_cache(maxsize=32)
def make_plan(grid: TimeGrid, alpha: float, orientation: str = LEFT,
              kind: str = INTEGRAL) -> FracOperatorPlan:
    return FracOperatorPlan(grid, float(alpha), orientation, kind)


def frac_integral(f: GridFn, alpha: float, orientation: str = LEFT) -> GridFn:
    """Riemann-Liouville integral of order ``alpha`` in (0, 1] at every node.

    Product-rectangle rule: f is replaced by its cell averages and the kernel
    (t - y)^(alpha-1) is integrated exactly on each cell. ``alpha = 1`` is the
    trapezoid antiderivative.
    """
    return make_plan(f.grid, alpha, orientation, INTEGRAL)(f)


def frac_derivative(f: GridFn, alpha: float, orientation: str = LEFT) -> GridFn:
    """Riemann-Liouville derivative of order ``alpha`` in (0, 1) via the Weyl formula.

    The formula is applied to the piecewise-linear interpolant of f, for which every
    singular cell moment is available in closed form. The singular endpoint (t = 0
    for the left operator, t = 1 for the right one) copies its neighbour's value.
    """
    return make_plan(f.grid, alpha, orientation, DERIVATIVE)(f)


def _power_weight(points: np.ndarray, p: float, dt: float) -> np.ndarray:
    return np.where(points > 0, points, 0.5 * dt) ** p


def weighted_frac_op(f: GridFn, alpha: float, orientation: str = LEFT, kind: str = INTEGRAL,
                     pre_power: float = 0.0, post_power: float = 0.0) -> GridFn:
    """t^pre_power * Op(t^post_power * f) on nodes.

    Both weights are finite everywhere: the inner weight multiplies cell data at cell
    midpoints, and the outer weight uses dt/2 in place of t = 0.
    """
    _check_order(alpha, kind)
    _check_orientation(orientation)
    if not (np.isfinite(pre_power) and np.isfinite(post_power)):
        raise InvalidArgument("power weights must be finite")
    grid = f.grid
    dt = grid.dt
    if pre_power == 0 and post_power == 0:
        return make_plan(grid, alpha, orientation, kind)(f)
    flip = orientation == RIGHT
    v = _flip(f.values) if flip else f.values
    # the weights are in terms of the original time variable
    mids = grid.midpoints[::-1] if flip else grid.midpoints
    nodes = grid.t[::-1] if flip else grid.t
    if kind == INTEGRAL:
        cells = node_to_cell(v) * _power_weight(mids, post_power, dt)
        out = cell_to_node_integral(cells, alpha, dt)
    else:
        inner = v * _power_weight(nodes, post_power, dt)
        out = make_plan(grid, alpha, LEFT, DERIVATIVE).apply_values(inner)
    out = out * _power_weight(nodes, pre_power, dt)
    if flip:
        out = _flip(out)
    bad = first_nonfinite(out)
    if bad is not None:
        raise NumericalFailure("weighted fractional operator produced non-finite values", bad)
    return GridFn(grid, out)


def frac_integration_by_parts_residual(f: GridFn, g: GridFn, alpha: float) -> float:
    """|int f I_{0+}^a g - int (I_{1-}^a f) g| on [0, 1]; a self-test of the quadrature."""
    _check_order(alpha, INTEGRAL)
    lhs = np.trapezoid(f.values * frac_integral(g, alpha, LEFT).values, dx=f.grid.dt)
    rhs = np.trapezoid(frac_integral(f, alpha, RIGHT).values * g.values, dx=f.grid.dt)
    return float(abs(lhs - rhs))


def frac_derivative_by_parts_residual(f: GridFn, g: GridFn, alpha: float) -> float:
    """Same check for the derivative pair: int f D_{0+}^a g vs int (D_{1-}^a f) g."""
    _check_order(alpha, DERIVATIVE)
    lhs = np.trapezoid(f.values * frac_derivative(g, alpha, LEFT).values, dx=f.grid.dt)
    rhs = np.trapezoid(frac_derivative(f, alpha, RIGHT).values * g.values, dx=f.grid.dt)
    return float(abs(lhs - rhs))
