"""Most probable paths: direct maximization of the discretized functional J, the
Euler-Lagrange residual, a boundary-value solver for the autonomous standard case,
and the noiseless reference trajectory.

Parametrization used by :func:`minimize_om`. The free variables are the scaled cell
slopes of the velocity, ``z_j = sqrt(dt) (phi_{j+1} - phi_j) / dt``. In these variables
the leading part of -J is close to |z|^2 / 2, so quasi-Newton iterations are well
conditioned independently of n. The conditions phi(1) = y1 and psi(1) = x1 are
linear in z and are imposed exactly by moving in the null space of the constraint
matrix (a quadratic penalty is available as an alternative). The gradient of J is
computed exactly for the discrete functional by the adjoint of the linear maps
involved; central finite differences are available for checking.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_bvp
from scipy.linalg import null_space
from scipy.optimize import minimize

from .errors import InvalidArgument, NumericalFailure, first_nonfinite
from .fbm import (SINGULAR, STANDARD, as_hurst, composition_constant, inverse_kh_sigma_cells,
                  rng_for)
from .fraccalc import DERIVATIVE, INTEGRAL, RIGHT, weighted_frac_op
from .grid import GridFn, TimeGrid, cell_to_node, node_to_cell, stencil_derivatives, write_columns
from .models import ModelSpec, NoiseIntensity, Potential, constant_noise, potential_force
from .omfunctional import (OMValue, PathPair, d_H, duffing_reduced_functional,
                           mismatch_density, om_functional)

MIN_NODES = 33
# "linear" cannot match both endpoint velocities; the cubic Hermite interpolant stands in
INIT_ALIASES = {"linear": "hermite", "noiseless_shoot": "noiseless"}


@dataclass(frozen=True)
class BoundaryData:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x0, self.y0, self.x1, self.y1)):
            raise InvalidArgument("boundary data must be finite")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class MppOptions:
    starts: int = 5
    seed: int = 0
    max_iter: int = 500
    gtol: float = 1e-8  # relative to 1 + |J|
    constraint: str = "nullspace"  # or "penalty"
    gradient: str = "adjoint"  # or "fd"
    perturbation: float = 0.5
    threads: int = 1


@dataclass(frozen=True)
class MppProblem:
    model: ModelSpec
    H: float
    boundary: BoundaryData
    grid: TimeGrid
    init: str | PathPair = "multistart"  # "noiseless", "hermite", "multistart" or a path
    options: MppOptions = field(default_factory=MppOptions)

    def __post_init__(self):
        as_hurst(self.H)
        if self.grid.n < MIN_NODES:
            raise InvalidArgument(f"most-probable-path problems need n >= {MIN_NODES}")
        if isinstance(self.init, PathPair):
            if self.init.grid != self.grid:
                raise InvalidArgument("initial path lives on a different grid")
            if abs(self.init.x0 - self.boundary.x0) > 1e-12 or abs(self.init.y0 - self.boundary.y0) > 1e-12:
                raise InvalidArgument("initial path does not start at (x0, y0)")
        elif self.init in INIT_ALIASES:
            object.__setattr__(self, "init", INIT_ALIASES[self.init])
        elif self.init not in ("noiseless", "hermite", "multistart"):
            raise InvalidArgument(f"unknown initialization {self.init!r}")
        if self.options.constraint not in ("nullspace", "penalty"):
            raise InvalidArgument(f"unknown constraint handling {self.options.constraint!r}")
        if self.options.gradient not in ("adjoint", "fd"):
            raise InvalidArgument(f"unknown gradient mode {self.options.gradient!r}")


@dataclass(frozen=True)
class MppSolution:
    path: PathPair
    J: OMValue
    iterations: int
    grad_norm: float
    converged: bool
    starts_tried: int
    best_start: int = 0
    history: tuple[float, ...] = ()
    constraint_residual: float = 0.0
    seed: int = 0
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        rec = {"J": self.J.J, "mismatch_term": self.J.mismatch_term,
               "divergence_term": self.J.divergence_term, "regime": self.J.regime,
               "H": self.J.H, "n": self.J.n, "iterations": self.iterations,
               "grad_norm": self.grad_norm, "converged": self.converged,
               "starts_tried": self.starts_tried, "best_start": self.best_start,
               "constraint_residual": self.constraint_residual, "seed": self.seed}
        rec.update({k: v for k, v in self.extras.items() if isinstance(v, (int, float, str, bool))})
        return rec


def write_path_csv(path: PathPair, csv_path: str | Path):
    write_columns(csv_path, ["t", "psi", "phi"], [path.grid.t, path.psi.values, path.phi.values])


def write_solution(sol: MppSolution, directory: str | Path, stem: str = "path") -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_path_csv(sol.path, directory / f"{stem}.csv")
    summary = sol.summary()
    (directory / f"{stem}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


# --- reference trajectories ---------------------------------------------------

def noiseless_shoot(model: ModelSpec, x0: float, y0: float, grid: TimeGrid,
                    scheme: str = "rk4") -> PathPair:
    """Noiseless trajectory of X'' = f_t(X, X') from (x0, y0), one step per grid cell.

    ``scheme="rk4"`` is classical fourth-order Runge-Kutta. ``scheme="trapezoid"`` is
    the implicit trapezoid rule, whose output makes the discretized mismatch density
    of :func:`om_functional` vanish to rounding (useful for exact zero checks).
    """
    if scheme == "trapezoid":
        return _trapezoid_shoot(model, x0, y0, grid)
    if scheme != "rk4":
        raise InvalidArgument(f"unknown scheme {scheme!r}")
    f = model.force.f
    h = grid.dt
    t = grid.t
    x = np.empty(grid.n)
    y = np.empty(grid.n)
    x[0], y[0] = x0, y0
    xi, yi = float(x0), float(y0)
    for i in range(grid.n - 1):
        ti = t[i]
        k1x, k1y = yi, float(f(ti, xi, yi))
        k2x, k2y = yi + 0.5 * h * k1y, float(f(ti + 0.5 * h, xi + 0.5 * h * k1x, yi + 0.5 * h * k1y))
        k3x, k3y = yi + 0.5 * h * k2y, float(f(ti + 0.5 * h, xi + 0.5 * h * k2x, yi + 0.5 * h * k2y))
        k4x, k4y = yi + h * k3y, float(f(ti + h, xi + h * k3x, yi + h * k3y))
        xi += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        yi += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        if not (math.isfinite(xi) and math.isfinite(yi)):
            raise NumericalFailure("noiseless trajectory blew up", i + 1)
        x[i + 1], y[i + 1] = xi, yi
    return PathPair(GridFn(grid, x), GridFn(grid, y), float(x0), float(y0))


def _trapezoid_shoot(model: ModelSpec, x0: float, y0: float, grid: TimeGrid) -> PathPair:
    force = model.force
    h = grid.dt
    t = grid.t
    x = np.empty(grid.n)
    y = np.empty(grid.n)
    x[0], y[0] = x0, y0
    for i in range(grid.n - 1):
        fi = float(force.f(t[i], x[i], y[i]))
        yn = y[i] + h * fi
        for _ in range(50):
            xn = x[i] + 0.5 * h * (y[i] + yn)
            G = yn - y[i] - 0.5 * h * (fi + float(force.f(t[i + 1], xn, yn)))
            dG = 1 - 0.5 * h * (0.5 * h * float(force.dfdx(t[i + 1], xn, yn)) + float(force.dfdy(t[i + 1], xn, yn)))
            step = G / dG
            yn -= step
            if abs(step) <= 1e-15 * (1 + abs(yn)):
                break
        if not math.isfinite(yn):
            raise NumericalFailure("noiseless trajectory blew up", i + 1)
        y[i + 1] = yn
        x[i + 1] = x[i] + 0.5 * h * (y[i] + yn)
    return PathPair(GridFn(grid, x), GridFn(grid, y), float(x0), float(y0))


def hermite_path(boundary: BoundaryData, grid: TimeGrid) -> PathPair:
    """The cubic matching all four boundary values."""
    x0, y0, x1, y1 = boundary.as_tuple()
    t = grid.t
    h00, h10, h01, h11 = 2 * t**3 - 3 * t**2 + 1, t**3 - 2 * t**2 + t, -2 * t**3 + 3 * t**2, t**3 - t**2
    d00, d10, d01, d11 = 6 * t**2 - 6 * t, 3 * t**2 - 4 * t + 1, -6 * t**2 + 6 * t, 3 * t**2 - 2 * t
    psi = x0 * h00 + y0 * h10 + x1 * h01 + y1 * h11
    phi = x0 * d00 + y0 * d10 + x1 * d01 + y1 * d11
    return PathPair(GridFn(grid, psi), GridFn(grid, phi), x0, y0)


# --- the discrete objective ---------------------------------------------------

class _Objective:
    """-J and its gradient as functions of the scaled velocity slopes z."""

    def __init__(self, problem: MppProblem):
        self.problem = problem
        grid = problem.grid
        self.grid = grid
        n = grid.n
        dt = grid.dt
        self.sqdt = math.sqrt(dt)
        self.spec = as_hurst(problem.H)
        self.dH = d_H(self.spec)
        self.sigma = problem.model.sigma_on(grid).values
        if np.any(self.sigma <= 0):
            raise InvalidArgument("noise intensity must be positive on the grid")
        sig_c = node_to_cell(self.sigma)
        # rows: images of unit node vectors under (K_H^sigma)^{-1}
        self.LT = inverse_kh_sigma_cells(np.eye(n), sig_c, self.spec, grid)
        w = np.full(n, dt)
        w[0] = w[-1] = 0.5 * dt
        self.w = w
        C = np.tril(np.ones((n, n)) * dt)
        C[:, 0] = 0.5 * dt
        C[np.arange(n), np.arange(n)] = 0.5 * dt
        C[0] = 0.0
        self.C = C
        b = problem.boundary
        self.x0, self.y0 = b.x0, b.y0
        # phi = y0 + T z with T_ij = sqrt(dt) for j < i; constraints on z are linear
        row_phi = np.full(n - 1, self.sqdt)
        row_psi = self._T_adj(w)
        rhs_phi = b.y1 - b.y0
        rhs_psi = b.x1 - b.x0 - b.y0 * w.sum()
        if problem.options.constraint == "nullspace":
            A = np.vstack([row_phi, row_psi])
            rhs = np.array([rhs_phi, rhs_psi])
            self.penalty_row = None
        else:
            A = row_phi[None, :]
            rhs = np.array([rhs_phi])
            self.penalty_row, self.penalty_rhs = row_psi, rhs_psi
        self.A, self.rhs = A, rhs
        self.z_p = np.linalg.lstsq(A, rhs, rcond=None)[0]
        self.N = null_space(A)
        self.mu = 0.0

    # linear maps between z and phi
    def _T(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros(z.shape[:-1] + (z.shape[-1] + 1,))
        out[..., 1:] = np.cumsum(z, axis=-1) * self.sqdt
        return out

    def _T_adj(self, a: np.ndarray) -> np.ndarray:
        rev = np.cumsum(a[..., ::-1], axis=-1)[..., ::-1]
        return self.sqdt * rev[..., 1:]

    def phi_from_z(self, z):
        return self.y0 + self._T(z)

    def z_from_phi(self, phi):
        return np.diff(phi, axis=-1) / self.sqdt

    def z_from_c(self, c):
        return self.z_p + c @ self.N.T

    def c_from_z(self, z):
        return (z - self.z_p) @ self.N

    def path(self, z) -> PathPair:
        phi = self.phi_from_z(z)
        psi = self.x0 + phi @ self.C.T
        psi[0] = self.x0
        return PathPair(GridFn(self.grid, psi), GridFn(self.grid, phi), self.x0, self.y0)

    def J_phi(self, phi: np.ndarray) -> np.ndarray:
        """J for a batch of velocity profiles (rows)."""
        model = self.problem.model
        t = self.grid.t
        psi = self.x0 + phi @ self.C.T
        f = np.broadcast_to(model.force.f(t, psi, phi), phi.shape)
        g = phi - self.y0 - f @ self.C.T
        r = g @ self.LT
        fy = np.broadcast_to(model.force.dfdy(t, psi, phi), phi.shape)
        return -0.5 * self.grid.dt * np.sum(r**2, axis=-1) - 0.5 * self.dH * fy @ self.w

    def value_grad_phi(self, phi: np.ndarray) -> tuple[float, np.ndarray]:
        force = self.problem.model.force
        t = self.grid.t
        C, w, dt = self.C, self.w, self.grid.dt
        psi = self.x0 + C @ phi
        shape = phi.shape
        f = np.broadcast_to(force.f(t, psi, phi), shape)
        fx = np.broadcast_to(force.dfdx(t, psi, phi), shape)
        fy = np.broadcast_to(force.dfdy(t, psi, phi), shape)
        fxy = np.broadcast_to(force.dfdxy(t, psi, phi), shape)
        fyy = np.broadcast_to(force.dfdyy(t, psi, phi), shape)
        g = phi - self.y0 - C @ f
        r = g @ self.LT
        J = -0.5 * dt * float(r @ r) - 0.5 * self.dH * float(fy @ w)
        u = -dt * (self.LT @ r)
        v = C.T @ u
        grad = u - C.T @ (fx * v) - fy * v
        grad -= 0.5 * self.dH * (w * fyy + C.T @ (w * fxy))
        return J, grad

    def __call__(self, c: np.ndarray) -> tuple[float, np.ndarray]:
        """Objective -J (plus penalty) and its gradient in null-space coordinates."""
        z = self.z_from_c(c)
        phi = self.phi_from_z(z)
        if self.problem.options.gradient == "adjoint":
            J, gphi = self.value_grad_phi(phi)
            gz = self._T_adj(gphi)
        else:
            J, gz = self._fd(z)
        val, grad = -J, -gz
        if self.penalty_row is not None:
            res = self.penalty_row @ z - self.penalty_rhs
            val += self.mu * res**2
            grad = grad + 2 * self.mu * res * self.penalty_row
        if not math.isfinite(val) or first_nonfinite(grad) is not None:
            return math.inf, np.zeros_like(c)
        return val, grad @ self.N

    def _fd(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        m = z.size
        step = 1e-6 * (1 + np.abs(z))
        batch = np.repeat(z[None, :], 2 * m, axis=0)
        idx = np.arange(m)
        batch[idx, idx] += step
        batch[m + idx, idx] -= step
        vals = self.J_phi(self.phi_from_z(batch))
        grad = (vals[:m] - vals[m:]) / (2 * step)
        return float(self.J_phi(self.phi_from_z(z[None, :]))[0]), grad

    def constraint_residual(self, z: np.ndarray) -> float:
        full = np.vstack([self.A] + ([self.penalty_row[None, :]] if self.penalty_row is not None else []))
        rhs = np.concatenate([self.rhs] + ([[self.penalty_rhs]] if self.penalty_row is not None else []))
        return float(np.max(np.abs(full @ z - rhs)))


def _start_paths(problem: MppProblem, obj: _Objective) -> list[np.ndarray]:
    """Initial z vectors, projected onto the constraint set."""
    grid, b, opts = problem.grid, problem.boundary, problem.options
    if isinstance(problem.init, PathPair):
        bases = [problem.init]
    elif problem.init == "hermite":
        bases = [hermite_path(b, grid)]
    else:
        try:
            shoot = noiseless_shoot(problem.model, b.x0, b.y0, grid)
        except NumericalFailure:
            shoot = hermite_path(b, grid)
        bases = [shoot] if problem.init == "noiseless" else [shoot, hermite_path(b, grid)]
    zs = [obj.z_from_phi(p.phi.values) for p in bases]
    if problem.init == "multistart":
        zs = zs[: opts.starts]
        t = grid.t
        modes = np.array([np.sin((k + 1) * np.pi * t) for k in range(4)])
        for i in range(len(zs), opts.starts):
            xi = rng_for(opts.seed, i).standard_normal(4)
            phi = bases[0].phi.values + opts.perturbation * (xi / np.arange(1, 5)) @ modes
            zs.append(obj.z_from_phi(phi))
    return [obj.c_from_z(z) for z in zs]


POLISH_MAX_DIM = 1500


def _newton_polish(obj: _Objective, c: np.ndarray, gtol: float, steps: int = 3) -> tuple[np.ndarray, int]:
    """Newton steps with a difference Hessian of the exact gradient.

    Used only when BFGS stops above ``gtol``, which happens when its line search runs
    out of precision on mildly ill-conditioned problems.
    """
    val, grad = obj(c)
    k = c.size
    if k == 0 or k > POLISH_MAX_DIM or np.max(np.abs(grad)) <= gtol:
        return c, 0
    h = 1e-5 * (1 + np.max(np.abs(c)))
    hess = np.empty((k, k))
    for i in range(k):
        d = np.zeros(k)
        d[i] = h
        hess[:, i] = (obj(c + d)[1] - obj(c - d)[1]) / (2 * h)
    hess = 0.5 * (hess + hess.T)
    done = 0
    for _ in range(steps):
        try:
            trial = c - np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        tval, tgrad = obj(trial)
        if not (tval <= val + 1e-12 * (1 + abs(val)) and np.max(np.abs(tgrad)) < np.max(np.abs(grad))):
            break
        c, val, grad = trial, tval, tgrad
        done += 1
        if np.max(np.abs(grad)) <= gtol:
            break
    return c, done


def _run_start(obj: _Objective, c0: np.ndarray, opts: MppOptions):
    history: list[float] = []

    def record(c):
        history.append(-obj(c)[0])

    v0, _ = obj(c0)
    if not math.isfinite(v0):
        raise InvalidArgument("objective is not finite at the initial path")
    history.append(-v0)
    c = c0
    iterations = 0
    mus = [0.0] if obj.penalty_row is None else [10.0**k for k in range(2, 9)]
    for mu in mus:
        obj.mu = mu
        # BFGS may stop on lost line-search precision; warm restarts reset its Hessian model
        for _ in range(4):
            gtol = opts.gtol * (1 + abs(history[-1]))
            res = minimize(obj, c, jac=True, method="BFGS", callback=record,
                           options={"maxiter": max(opts.max_iter - iterations, 1), "gtol": gtol,
                                    "norm": np.inf})
            c = res.x
            iterations += int(res.nit)
            if res.success or res.nit == 0 or iterations >= opts.max_iter:
                break
        c, extra = _newton_polish(obj, c, opts.gtol * (1 + abs(history[-1])))
        iterations += extra
        if extra:
            history.append(-obj(c)[0])
    val, grad = obj(c)
    gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
    J = -val if obj.penalty_row is None else float(obj.J_phi(obj.phi_from_z(obj.z_from_c(c))[None, :])[0])
    return c, J, gnorm, iterations, tuple(history)


def minimize_om(problem: MppProblem) -> MppSolution:
    """Maximize J over paths with the four boundary values pinned.

    Multistart (``options.starts``): the noiseless trajectory, the cubic Hermite
    interpolant of the boundary data, then seeded smooth perturbations of the first.
    The best J wins; ties within 1e-10 go to the lowest start index.
    """
    opts = problem.options
    obj = _Objective(problem)
    starts = _start_paths(problem, obj)

    def run(c0):
        # each start owns its objective copy (the penalty weight is mutable state)
        local = obj if opts.constraint == "nullspace" else _Objective(problem)
        return _run_start(local, c0, opts)

    if opts.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(c0) for c0 in starts]

    best = 0
    for i, res in enumerate(results):
        if res[1] > results[best][1] + 1e-10:
            best = i
    c, J, gnorm, iterations, history = results[best]
    z = obj.z_from_c(c)
    path = obj.path(z)
    value = om_functional(path, problem.model, problem.H)
    tol = opts.gtol * (1 + abs(J))
    return MppSolution(path, value, iterations, gnorm, gnorm <= tol, len(starts), best, history,
                       obj.constraint_residual(z), opts.seed,
                       {"start_J": [r[1] for r in results]})


def perturbation_check(problem: MppProblem, center: PathPair, count: int = 20,
                       amplitude: float = 0.05, seed: int = 0) -> tuple[float, np.ndarray]:
    """J at ``center`` and at ``count`` boundary-respecting perturbations of it."""
    obj = _Objective(problem)
    t = problem.grid.t
    modes = np.array([np.sin((k + 1) * np.pi * t) for k in range(6)])
    z0 = obj.z_from_phi(center.phi.values)
    zc = obj.z_from_c(obj.c_from_z(z0))
    out = np.empty(count)
    for i in range(count):
        xi = rng_for(seed, i).standard_normal(modes.shape[0])
        phi = center.phi.values + amplitude * xi @ modes / np.sqrt(modes.shape[0])
        z = obj.z_from_c(obj.c_from_z(obj.z_from_phi(phi)))
        out[i] = om_functional(obj.path(z), problem.model, problem.H).J
    return om_functional(obj.path(zc), problem.model, problem.H).J, out


# --- Euler-Lagrange residual ----------------------------------------------------

ADJOINT = "adjoint"
PRINTED = "printed"


def _weighted_right(values: np.ndarray, grid: TimeGrid, alpha: float, kind: str,
                    pre: float, post: float) -> np.ndarray:
    return weighted_frac_op(GridFn(grid, values), alpha, RIGHT, kind, pre, post).values


def el_residual(path: PathPair, model: ModelSpec, H, variant: str = ADJOINT) -> GridFn:
    """Euler-Lagrange left-hand side on interior nodes t_2..t_{n-3} (the rest carry 0).

    ``variant="adjoint"`` is the first variation of the discretized functional's
    continuum form,

        q'' - d_x f q + (d_y f q)' + d_H/2 (d_xy f - (d_yy f)') = 0,

    with q = sigma^-1 A* r, r the mismatch density and A* the adjoint of the inverse
    noise operator (s^a I^a_{1-} s^-a in the singular case, s^-a D^a_{1-} s^a in the
    regular case, identity at H = 1/2, each divided by C_H). ``variant="printed"``
    keeps the coefficients and weight placements of the published displays.
    """
    if variant not in (ADJOINT, PRINTED):
        raise InvalidArgument(f"unknown variant {variant!r}")
    spec = as_hurst(H)
    grid = path.grid
    if grid.n < 7:
        raise InvalidArgument("the Euler-Lagrange residual needs n >= 7")
    t, dt = grid.t, grid.dt
    psi, phi = path.psi.values, path.phi.values
    sigma = model.sigma_on(grid).values
    force = model.force
    fx = np.broadcast_to(force.dfdx(t, psi, phi), t.shape)
    fy = np.broadcast_to(force.dfdy(t, psi, phi), t.shape)
    fxy = np.broadcast_to(force.dfdxy(t, psi, phi), t.shape)
    fyy = np.broadcast_to(force.dfdyy(t, psi, phi), t.shape)
    r = cell_to_node(mismatch_density(psi, phi, path.y0, model, spec, grid, sigma))
    a = spec.alpha
    printed = variant == PRINTED
    scale = 1.0 if printed else 1.0 / composition_constant(spec)

    def adjoint_op(values, third_term=False):
        if spec.regime == STANDARD:
            return values / sigma
        if spec.regime == SINGULAR:
            out = _weighted_right(values, grid, a, INTEGRAL, a, -a)
        elif printed and third_term:
            out = _weighted_right(values, grid, a, DERIVATIVE, a, a)
        else:
            out = _weighted_right(values, grid, a, DERIVATIVE, -a, a)
        return scale * out / sigma

    if printed and spec.regime == STANDARD:
        q = 2 * r / sigma  # the standard display squares sigma once more: r = (phi' - f)/sigma
        _, q2 = stencil_derivatives(q, dt)
        d_fxq, _ = stencil_derivatives(fx * q, dt)
        res = q2 - fx * q + d_fxq + (fxy + fyy)
    else:
        q = adjoint_op(r)
        q3 = adjoint_op(r, third_term=True)
        _, q2 = stencil_derivatives(q, dt)
        d_fyq, _ = stencil_derivatives(fy * q3, dt)
        d_fyy, _ = stencil_derivatives(fyy, dt)
        first = 2 * q2 if printed else q2
        coef = d_H(spec) if printed else 0.5 * d_H(spec)
        res = first - fx * q + d_fyq + coef * (fxy - d_fyy)
    res = np.array(res, dtype=float)
    # the two nodes at each end only see one-sided stencils
    res[:2] = res[-2:] = 0.0
    bad = first_nonfinite(res)
    if bad is not None:
        raise NumericalFailure("non-finite Euler-Lagrange residual", bad)
    return GridFn(grid, res)


# --- standard-case boundary value problem ----------------------------------------

def solve_el_bvp(V: Potential, gamma: float, boundary: BoundaryData, grid: TimeGrid,
                 init: PathPair | None = None, sigma: float = 1.0, tol: float = 1e-8,
                 max_nodes: int = 100000) -> MppSolution:
    """Solve psi'''' + (2 V'' - gamma^2) psi'' + V''' psi'^2 + V'' V' = 0 with
    psi(0) = x0, psi'(0) = y0, psi(1) = x1, psi'(1) = y1.

    Collocation with damped Newton (scipy's ``solve_bvp``) on the first-order
    system (psi, psi', psi'', psi'''). The returned J is the functional at H = 1/2
    with constant noise ``sigma``, evaluated on ``grid``.
    """
    g2 = float(gamma) ** 2
    x0, y0, x1, y1 = boundary.as_tuple()

    def rhs(s, y):
        p, p1, p2, p3 = y
        p4 = -(2 * V.d2V(p) - g2) * p2 - V.d3V(p) * p1**2 - V.d2V(p) * V.dV(p)
        return np.vstack([p1, p2, p3, p4])

    def bc(ya, yb):
        return np.array([ya[0] - x0, ya[1] - y0, yb[0] - x1, yb[1] - y1])

    def jac(s, y):
        p, p1, p2, p3 = y
        d2, d3 = V.d2V(p), V.d3V(p)
        d4 = V.d4V(p) if V.d4V is not None else np.zeros_like(p)
        J = np.zeros((4, 4, p.size))
        J[0, 1] = J[1, 2] = J[2, 3] = 1.0
        J[3, 0] = -2 * d3 * p2 - d4 * p1**2 - d3 * V.dV(p) - d2**2
        J[3, 1] = -2 * d3 * p1
        J[3, 2] = -(2 * d2 - g2)
        return J

    mesh = np.linspace(0, 1, 65)
    guess = hermite_path(boundary, TimeGrid(65)) if init is None else None
    if guess is not None:
        d1, d2 = stencil_derivatives(guess.psi.values, mesh[1])
        y_init = np.vstack([guess.psi.values, d1, d2, np.gradient(d2, mesh[1])])
    else:
        psi0 = np.interp(mesh, init.grid.t, init.psi.values)
        d1, d2 = stencil_derivatives(psi0, mesh[1])
        y_init = np.vstack([psi0, d1, d2, np.gradient(d2, mesh[1])])
    sol = solve_bvp(rhs, bc, mesh, y_init, fun_jac=jac, tol=tol, max_nodes=max_nodes)
    y = sol.sol(grid.t)
    if first_nonfinite(y) is not None:
        raise NumericalFailure("boundary value solver returned non-finite values", first_nonfinite(y[0]))
    psi, phi = y[0].copy(), y[1].copy()
    psi[0], phi[0], psi[-1], phi[-1] = x0, y0, x1, y1
    path = PathPair(GridFn(grid, psi), GridFn(grid, phi), x0, y0)
    model = ModelSpec(potential_force(V, gamma), constant_noise(sigma))
    value = om_functional(path, model, 0.5)
    red = duffing_reduced_functional(path, gamma, V)
    # exact continuum J from the collocation polynomial: -(full)/(2 sigma^2) + gamma/2
    fine = np.linspace(0, 1, 20001)
    yf = sol.sol(fine)
    full = np.trapezoid((yf[2] + gamma * yf[1] + V.dV(yf[0])) ** 2, fine)
    extras = {"reduced": red.reduced, "full": red.full, "boundary_correction": red.boundary_correction,
              "J_collocation": -0.5 * full / sigma**2 + 0.5 * gamma,
              "rms_residual": float(np.max(sol.rms_residuals)), "mesh_nodes": int(sol.x.size),
              "status": int(sol.status), "message": str(sol.message)}
    bc_res = float(np.max(np.abs(bc(sol.sol(0.0), sol.sol(1.0)))))
    return MppSolution(path, value, int(sol.niter) if hasattr(sol, "niter") else 0,
                       float(np.max(sol.rms_residuals)), bool(sol.success), 1, 0, (), bc_res, 0, extras)


def duffing_model(gamma: float, sigma: float | NoiseIntensity, potential: Potential | None = None) -> ModelSpec:
    from .models import double_well

    noise = sigma if isinstance(sigma, NoiseIntensity) else constant_noise(sigma)
    return ModelSpec(potential_force(potential or double_well(), gamma), noise)


__all__ = [
    "BoundaryData", "MppOptions", "MppProblem", "MppSolution", "minimize_om", "noiseless_shoot",
    "hermite_path", "el_residual", "solve_el_bvp", "perturbation_check", "write_path_csv",
    "write_solution", "duffing_model", "ADJOINT", "PRINTED",
]
