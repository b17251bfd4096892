"""The Onsager-Machlup functional of X'' = f_t(X, X') + sigma_t xi^H_t.

For a path psi with velocity phi = psi',

    J(psi) = -1/2 int (K_H^sigma)^{-1}(phi - y0 - int f(psi, phi))(s)^2 ds
             -1/2 int d_H d_y f_s(psi_s, phi_s) ds.

Discretization. Densities live on cells: the drift is averaged over each cell
(so int f is the trapezoid antiderivative), sigma is averaged likewise, and the
mismatch density r is squared and summed cell by cell. The divergence term is a
trapezoid sum over nodes. The regime-specific form subtracts K_H^{-1}(f / sigma)
from phi_dot; the unified form inverts K_H^sigma on the whole residual. Both use
the same linear operator, so they agree up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import simpson

from .errors import InvalidArgument, NumericalFailure, first_nonfinite
from .fbm import (REGULAR, SINGULAR, STANDARD, HurstSpec, as_hurst, composition_constant,
                  inverse_kh_sigma_cells, kh_inverse_slopes)
from .grid import GridFn, TimeGrid, cell_to_node, cumulative_integral, node_to_cell, stencil_derivatives
from .models import ModelSpec, Potential

REGIME_SPECIFIC = "regime_specific"
UNIFIED = "unified"


def d_H(H) -> float:
    """sqrt(2H Gamma(1/2 + H) Gamma(3/2 - H) / Gamma(2 - 2H)); equals 1 at H = 1/2."""
    h = as_hurst(H).H
    return math.sqrt(2 * h * math.gamma(0.5 + h) * math.gamma(1.5 - h) / math.gamma(2 - 2 * h))


# --- paths --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathPair:
    """Position psi and velocity phi = psi' on a common grid."""

    psi: GridFn
    phi: GridFn
    x0: float | None = None
    y0: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.psi.grid != self.phi.grid:
            raise InvalidArgument("psi and phi live on different grids")
        x0 = float(self.psi.values[0]) if self.x0 is None else float(self.x0)
        y0 = float(self.phi.values[0]) if self.y0 is None else float(self.y0)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "y0", y0)
        tol = 1e-9
        if abs(self.psi.values[0] - x0) > tol * max(1.0, abs(x0)):
            raise InvalidArgument(f"psi(0) = {self.psi.values[0]} but x0 = {x0}")
        if abs(self.phi.values[0] - y0) > tol * max(1.0, abs(y0)):
            raise InvalidArgument(f"phi(0) = {self.phi.values[0]} but y0 = {y0}")

    @classmethod
    def from_velocity(cls, phi: GridFn, x0: float) -> "PathPair":
        """psi = x0 + trapezoid antiderivative of phi."""
        return cls(cumulative_integral(phi) + float(x0), phi, float(x0), float(phi.values[0]))

    @classmethod
    def from_arrays(cls, psi, phi) -> "PathPair":
        psi = np.asarray(psi, dtype=float)
        grid = TimeGrid(psi.shape[-1])
        return cls(GridFn(grid, psi), GridFn(grid, phi))

    @property
    def grid(self) -> TimeGrid:
        return self.psi.grid

    @property
    def x1(self) -> float:
        return float(self.psi.values[-1])

    @property
    def y1(self) -> float:
        return float(self.phi.values[-1])

    @property
    def boundary(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def consistency_error(self) -> float:
        """sup |psi - x0 - int phi| (zero for paths built by :meth:`from_velocity`)."""
        return float(np.max(np.abs(self.psi.values - self.x0 - cumulative_integral(self.phi).values)))

    def phi_dot_cells(self, sigma: GridFn, H) -> np.ndarray:
        """Cell values of phi_dot, computed once per (sigma, H)."""
        spec = as_hurst(H)
        key = (spec.H, sigma.values.tobytes())
        if key not in self._cache:
            cells = inverse_kh_sigma_cells(self.phi.values - self.y0, _sigma_cells(sigma), spec, self.grid)
            cells.flags.writeable = False
            self._cache[key] = cells
        return self._cache[key]

    def phi_dot(self, sigma: GridFn, H) -> GridFn:
        return GridFn(self.grid, cell_to_node(self.phi_dot_cells(sigma, H)))


def _sigma_cells(sigma: GridFn | np.ndarray) -> np.ndarray:
    values = sigma.values if isinstance(sigma, GridFn) else np.asarray(sigma, dtype=float)
    cells = node_to_cell(values)
    if np.any(cells == 0):
        raise InvalidArgument("noise intensity vanishes on a cell")
    return cells


# --- the functional -----------------------------------------------------------

@dataclass(frozen=True)
class OMValue:
    J: float
    mismatch_term: float
    divergence_term: float
    regime: str
    H: float
    n: int
    form: str = UNIFIED
    diagnostics: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"J": self.J, "mismatch_term": self.mismatch_term,
                "divergence_term": self.divergence_term, "regime": self.regime,
                "H": self.H, "n": self.n, "form": self.form}

    @classmethod
    def from_record(cls, rec: dict) -> "OMValue":
        return cls(float(rec["J"]), float(rec["mismatch_term"]), float(rec["divergence_term"]),
                   str(rec["regime"]), float(rec["H"]), int(rec["n"]), str(rec.get("form", UNIFIED)))


class OMTerms(NamedTuple):
    mismatch: np.ndarray
    divergence: np.ndarray

    @property
    def J(self) -> np.ndarray:
        return self.mismatch + self.divergence


def _finite_or_raise(values: np.ndarray, what: str):
    bad = first_nonfinite(values)
    if bad is not None:
        node = bad % values.shape[-1] if values.ndim else bad
        raise NumericalFailure(f"non-finite {what}", int(node))


def mismatch_density(psi: np.ndarray, phi: np.ndarray, y0: float, model: ModelSpec, H,
                     grid: TimeGrid, sigma: np.ndarray | None = None,
                     form: str = UNIFIED, phi_dot_cells: np.ndarray | None = None) -> np.ndarray:
    """Cell values of (K_H^sigma)^{-1}(phi - y0 - int f) for one or a batch of paths."""
    spec = as_hurst(H)
    sig = model.sigma_on(grid).values if sigma is None else sigma
    sig_c = _sigma_cells(sig)
    f_nodes = np.asarray(model.force.f(grid.t, psi, phi), dtype=float)
    _finite_or_raise(f_nodes, "drift")
    f_c = node_to_cell(f_nodes)
    if form == UNIFIED:
        drift_int = np.zeros(f_nodes.shape)
        drift_int[..., 1:] = np.cumsum(f_c, axis=-1) * grid.dt
        r = inverse_kh_sigma_cells(np.asarray(phi) - y0 - drift_int, sig_c, spec, grid)
    elif form == REGIME_SPECIFIC:
        if phi_dot_cells is None:
            phi_dot_cells = inverse_kh_sigma_cells(np.asarray(phi) - y0, sig_c, spec, grid)
        r = phi_dot_cells - kh_inverse_slopes(f_c / sig_c, spec, grid)
    else:
        raise InvalidArgument(f"unknown form {form!r}")
    _finite_or_raise(r, "mismatch integrand")
    return r


def om_terms(psi: np.ndarray, phi: np.ndarray, y0: float, model: ModelSpec, H, grid: TimeGrid,
             sigma: np.ndarray | None = None, form: str = UNIFIED,
             phi_dot_cells: np.ndarray | None = None) -> OMTerms:
    """Batched evaluation: rows of ``psi``/``phi`` are paths. Returns per-path terms."""
    r = mismatch_density(psi, phi, y0, model, H, grid, sigma, form, phi_dot_cells)
    dyf = np.asarray(model.force.dfdy(grid.t, psi, phi), dtype=float)
    dyf = np.broadcast_to(dyf, np.broadcast(psi, phi).shape)
    _finite_or_raise(dyf, "d_y f")
    mismatch = -0.5 * np.sum(r**2, axis=-1) * grid.dt
    divergence = -0.5 * d_H(H) * np.trapezoid(dyf, dx=grid.dt, axis=-1)
    return OMTerms(mismatch, divergence)


def om_functional(path: PathPair, model: ModelSpec, H, form: str = UNIFIED) -> OMValue:
    """J(psi) in the chosen form; see the module docstring for the discretization."""
    spec = as_hurst(H)
    grid = path.grid
    sigma = model.sigma_on(grid)
    if np.any(sigma.values <= 0) or (model.m > 0 and np.min(sigma.values) < model.m * (1 - 1e-12)):
        raise InvalidArgument("noise intensity violates its lower bound on the grid")
    pdc = path.phi_dot_cells(sigma, spec) if form == REGIME_SPECIFIC else None
    terms = om_terms(path.psi.values, path.phi.values, path.y0, model, spec, grid,
                     sigma.values, form, pdc)
    mis, div = float(terms.mismatch), float(terms.divergence)
    diag = {"d_H": d_H(spec), "C_H": composition_constant(spec), "cells": grid.n - 1,
            "mismatch_rule": "cell midpoint", "divergence_rule": "trapezoid"}
    return OMValue(mis + div, mis, div, spec.regime, spec.H, grid.n, form, diag)


# --- Duffing energy reduction ------------------------------------------------

@dataclass(frozen=True)
class DuffingReduction:
    reduced: float  # int (psi'' + V'(psi))^2 + gamma^2 psi'^2
    full: float  # int (psi'' + gamma psi' + V'(psi))^2
    boundary_correction: float  # gamma (phi1^2 - phi0^2) + 2 gamma (V(psi1) - V(psi0))

    @property
    def residual(self) -> float:
        return abs(self.full - self.reduced - self.boundary_correction)


def duffing_reduced_functional(path: PathPair, gamma: float, V: Potential) -> DuffingReduction:
    """Energy-reduced Duffing action and the pieces needed to verify the reduction.

    Expanding the square, the cross term 2 gamma int psi' (psi'' + V'(psi)) is the
    exact derivative of gamma psi'^2 + 2 gamma V(psi). Derivatives come from
    five-point stencils on psi and integrals from Simpson's rule.
    """
    grid = path.grid
    if grid.n < 5:
        raise InvalidArgument("the Duffing reduction needs n >= 5")
    psi = path.psi.values
    d1, d2 = stencil_derivatives(psi, grid.dt)
    dv = V.dV(psi)
    reduced = simpson((d2 + dv) ** 2 + gamma**2 * d1**2, dx=grid.dt)
    full = simpson((d2 + gamma * d1 + dv) ** 2, dx=grid.dt)
    corr = gamma * (d1[-1] ** 2 - d1[0] ** 2) + 2 * gamma * (V.V(psi[-1]) - V.V(psi[0]))
    return DuffingReduction(float(reduced), float(full), float(corr))


# --- Assumption (A) ----------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    passed: bool
    reasons: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"pass": self.passed, "reasons": list(self.reasons),
                "warnings": list(self.warnings), **self.details}


def beta_window(H) -> tuple[float, float]:
    """Admissible open interval for the Hölder exponent beta of the tube norm."""
    spec = as_hurst(H)
    if spec.regime == STANDARD:
        return (0.0, 0.5)
    return (spec.H - 0.5, spec.H - 0.25) if spec.regime == REGULAR else (0.0, spec.H - 0.25)


def default_beta(H) -> float:
    lo, hi = beta_window(H)
    return 0.5 * (max(lo, 0.0) + hi)


def lipschitz_ratio(m: float, M: float, alpha: float, L: float, beta: float) -> float:
    """m^2 (2 beta + 1) Gamma(1 + beta)^2 / (2 M^2 alpha^2 L^2 Gamma(beta - alpha)^2)."""
    denom = 2 * M**2 * alpha**2 * L**2 * math.gamma(beta - alpha) ** 2
    if denom == 0:
        return math.inf
    return m**2 * (2 * beta + 1) * math.gamma(1 + beta) ** 2 / denom


def check_assumption_A(model: ModelSpec, H, beta: float, grid: TimeGrid | None = None) -> AssumptionReport:
    """Check the model hypotheses; never raises on a failed hypothesis.

    A beta outside the admissible window is reported as a warning, not a failure.
    """
    spec = as_hurst(H)
    grid = grid or TimeGrid(1001)
    reasons: list[str] = []
    warnings: list[str] = []
    m, M = float(model.m), float(model.M)
    details: dict = {"H": spec.H, "beta": float(beta), "regime": spec.regime, "m": m, "M": M}

    if not m > 0:
        reasons.append("noise intensity not bounded below")
    sig = np.abs(model.sigma_on(grid).values)
    details["sigma_min_on_grid"] = float(sig.min())
    details["sigma_max_on_grid"] = float(sig.max())
    if m > 0 and sig.min() < m * (1 - 1e-12):
        reasons.append("noise intensity drops below its stated lower bound m")
    if sig.max() > M * (1 + 1e-12):
        reasons.append("noise intensity exceeds its stated upper bound M")
    if not 0 < beta < 1:
        reasons.append("beta must lie in (0, 1)")

    lo, hi = beta_window(spec)
    details["beta_window"] = (lo, hi)
    if not lo < beta < hi:
        warnings.append(f"beta={beta} lies outside the admissible window ({lo:.4g}, {hi:.4g})")

    if spec.regime == REGULAR:
        L = model.lipschitz_L
        details["L"] = L
        if L is None:
            reasons.append("drift is not globally Lipschitz (no constant L)")
        elif beta <= spec.alpha:
            reasons.append("Lipschitz inequality needs beta > H - 1/2")
        elif m > 0:
            ratio = lipschitz_ratio(m, M, spec.alpha, float(L), float(beta))
            details["lipschitz_ratio"] = ratio
            if not ratio > 1:
                reasons.append(f"Lipschitz inequality fails (ratio {ratio:.4g} <= 1)")
    else:
        details["lipschitz_ratio"] = None  # not required for H <= 1/2
    return AssumptionReport(not reasons, tuple(reasons), tuple(warnings), details)


__all__ = [
    "REGIME_SPECIFIC", "UNIFIED", "SINGULAR", "STANDARD", "REGULAR", "HurstSpec",
    "d_H", "PathPair", "OMValue", "OMTerms", "om_terms", "om_functional", "mismatch_density",
    "DuffingReduction", "duffing_reduced_functional", "AssumptionReport", "beta_window",
    "default_beta", "lipschitz_ratio", "check_assumption_A",
]
