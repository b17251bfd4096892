"""Fractional Brownian motion: covariance, the Volterra kernel K_H and its operators,
path sampling and pathwise (Young) integration against B^H.

Conventions. ``alpha = |H - 1/2|``. The operator K_H acts on densities (cell data) and
returns node data:

    H > 1/2:  K_H h = C_H * I^1      s^alpha I^alpha s^-alpha h
    H < 1/2:  K_H h = C_H * I^(2H)   s^alpha I^alpha s^-alpha h
    H = 1/2:  K_H h = I^1 h

The scalar ``C_H`` (:func:`composition_constant`) is fixed once per H by matching the
composition on h = 1 against direct quadrature of the kernel, so both representations
of K_H describe the same operator. Its inverse on differentiable data uses the
slopes h' and is ``s^alpha D^alpha s^-alpha h' / C_H`` (H > 1/2) or
``s^-alpha I^alpha s^alpha h' / C_H`` (H < 1/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.special import beta as beta_fn
from scipy.special import hyp2f1

from .errors import InvalidArgument, NumericalFailure, first_nonfinite
from .fraccalc import cell_derivative, cell_integral, cell_to_node_integral
from .grid import GridFn, TimeGrid, cell_to_node, write_columns

SINGULAR = "singular"
STANDARD = "standard"
REGULAR = "regular"


@dataclass(frozen=True)
class HurstSpec:
    H: float

    def __post_init__(self):
        if not 0.25 < self.H < 1:
            raise InvalidArgument(f"Hurst index must lie in (1/4, 1), got {self.H}")

    @property
    def alpha(self) -> float:
        return abs(self.H - 0.5)

    @property
    def regime(self) -> str:
        if self.H < 0.5:
            return SINGULAR
        if self.H > 0.5:
            return REGULAR
        return STANDARD


def as_hurst(H) -> HurstSpec:
    return H if isinstance(H, HurstSpec) else HurstSpec(float(H))


# --- covariance and kernel -----------------------------------------------------

def covariance(t, s, H) -> np.ndarray | float:
    """R_H(t, s) = (|t|^2H + |s|^2H - |t - s|^2H) / 2."""
    h2 = 2 * as_hurst(H).H
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    out = 0.5 * (np.abs(t) ** h2 + np.abs(s) ** h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def c_H(H) -> float:
    H = as_hurst(H).H
    return math.sqrt(H * (2 * H - 1) / beta_fn(2 - 2 * H, H - 0.5))


def b_H(H) -> float:
    H = as_hurst(H).H
    return math.sqrt(2 * H / ((1 - 2 * H) * beta_fn(1 - 2 * H, H + 0.5)))


def _kernel_closed(t, s, spec: HurstSpec):
    # inner integrals rewritten with u = s + (t - s) v as Gauss hypergeometric functions
    a = spec.alpha
    z = (t - s) / s
    if spec.regime == REGULAR:
        inner = (t - s) ** a * s**a / a * hyp2f1(-a, a, a + 1, -z)
        return c_H(spec) * s ** (-a) * inner
    inner = (t - s) ** (1 - a) * s ** (-a - 1) / (1 - a) * hyp2f1(a + 1, 1 - a, 2 - a, -z)
    return b_H(spec) * ((t / s) ** (-a) * (t - s) ** (-a) + a * s**a * inner)


def _kernel_scaled(t: float, s: float, spec: HurstSpec, right: float) -> float:
    """K_H(t, s) s^alpha (t - s)^-right, the regular part left by algebraic-weight quadrature."""
    s = min(max(s, 1e-14 * t), t * (1 - 1e-14))
    return _kernel_closed(t, s, spec) * s**spec.alpha * (t - s) ** (-right)


def _kernel_quad(t: float, s: float, spec: HurstSpec) -> float:
    a = spec.alpha
    if spec.regime == REGULAR:
        inner, _ = quad(lambda u: u**a, s, t, weight="alg", wvar=(a - 1, 0))
        return c_H(spec) * s ** (-a) * inner
    inner, _ = quad(lambda u: u ** (-a - 1), s, t, weight="alg", wvar=(-a, 0))
    return b_H(spec) * ((t / s) ** (-a) * (t - s) ** (-a) + a * s**a * inner)


def kernel_KH(t: float, s: float, H, method: str = "closed") -> float:
    """K_H(t, s) for 0 < s < t <= 1.

    ``method="closed"`` uses hypergeometric closed forms of the inner integral,
    ``method="quad"`` integrates it with algebraic-weight adaptive quadrature.
    """
    spec = as_hurst(H)
    if not 0 < s < t <= 1:
        raise InvalidArgument(f"kernel needs 0 < s < t <= 1, got t={t}, s={s}")
    if spec.regime == STANDARD:
        return 1.0
    if method == "quad":
        return float(_kernel_quad(float(t), float(s), spec))
    if method != "closed":
        raise InvalidArgument(f"unknown kernel method {method!r}")
    return float(_kernel_closed(float(t), float(s), spec))


def kernel_matrix(t: np.ndarray, s: np.ndarray, H) -> np.ndarray:
    """Vectorized K_H(t, s), zero where s >= t."""
    spec = as_hurst(H)
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    out = np.zeros(t.shape)
    mask = (s > 0) & (s < t)
    if spec.regime == STANDARD:
        out[mask] = 1.0
    else:
        out[mask] = _kernel_closed(t[mask], s[mask], spec)
    return out


def kernel_covariance(t: float, s: float, H) -> float:
    """int_0^{min(t,s)} K_H(t,u) K_H(s,u) du by adaptive quadrature."""
    spec = as_hurst(H)
    lo = min(t, s)
    if lo <= 0:
        return 0.0
    if spec.regime == STANDARD:
        return lo
    val, _ = quad(lambda u: _kernel_closed(t, u, spec) * _kernel_closed(s, u, spec),
                  0, lo, limit=200, epsabs=1e-12, epsrel=1e-10)
    return float(val)


@lru_cache(maxsize=None)
def composition_constant(H) -> float:
    """C_H such that C_H * (fractional composition) reproduces int_0^t K_H(t, s) h(s) ds."""
    spec = as_hurst(H)
    if spec.regime == STANDARD:
        return 1.0
    a = spec.alpha
    right = -a if spec.regime == SINGULAR else 0.0
    # K_H(1, s) ~ s^-a at 0 (and ~ (1 - s)^-a at 1 in the singular case)
    val, _ = quad(lambda s: _kernel_scaled(1.0, s, spec, right), 0, 1,
                  weight="alg", wvar=(-a, right), limit=200, epsabs=1e-13, epsrel=1e-12)
    if spec.regime == REGULAR:
        comp_one = math.gamma(1 - a) / (1 + a)
    else:
        comp_one = math.gamma(1 - a) * math.gamma(1 + a) / math.gamma(2 - a)
    return val / comp_one


# --- operators on cell data ---------------------------------------------------

def kh_cells(u: np.ndarray, H, grid: TimeGrid) -> np.ndarray:
    """K_H applied to piecewise-constant density ``u`` (cells -> nodes)."""
    spec = as_hurst(H)
    dt = grid.dt
    if spec.regime == STANDARD:
        return cell_to_node_integral(u, 1.0, dt)
    a = spec.alpha
    m = grid.midpoints
    inner = m**a * cell_integral(m ** (-a) * u, a, dt)
    outer_order = 1.0 if spec.regime == REGULAR else 1 - 2 * a
    return composition_constant(spec) * cell_to_node_integral(inner, outer_order, dt)


def kh_inverse_slopes(slopes: np.ndarray, H, grid: TimeGrid) -> np.ndarray:
    """K_H^{-1} h given the cell slopes h' of a node function with h(0) = 0 (cells -> cells)."""
    spec = as_hurst(H)
    if spec.regime == STANDARD:
        return np.array(slopes, dtype=float)
    a = spec.alpha
    m = grid.midpoints
    c = composition_constant(spec)
    if spec.regime == REGULAR:
        return m**a * cell_derivative(m ** (-a) * slopes, a, grid.dt) / c
    return m ** (-a) * cell_integral(m**a * slopes, a, grid.dt) / c


def stieltjes_slopes(sigma_cells: np.ndarray, g: np.ndarray, dt: float, invert: bool) -> np.ndarray:
    """Cell slopes of int sigma^{+-1} dg, with sigma taken at cell midpoints."""
    inc = np.diff(g, axis=-1) / dt
    return inc / sigma_cells if invert else inc * sigma_cells


def inverse_kh_sigma_cells(g: np.ndarray, sigma_cells: np.ndarray, H, grid: TimeGrid) -> np.ndarray:
    """(K_H^sigma)^{-1} g on cells: K_H^{-1}(int_0^. sigma^-1 dg)."""
    return kh_inverse_slopes(stieltjes_slopes(sigma_cells, g, grid.dt, invert=True), H, grid)


# --- public node-level operators ----------------------------------------------

def _checked(grid: TimeGrid, values: np.ndarray, what: str) -> GridFn:
    bad = first_nonfinite(values)
    if bad is not None:
        raise NumericalFailure(f"{what} produced non-finite values", bad)
    return GridFn(grid, values)


def apply_KH(h: GridFn, H) -> GridFn:
    """(K_H h)(t) = int_0^t K_H(t, s) h(s) ds through the fractional composition."""
    return _checked(h.grid, kh_cells(h.to_cells(), H, h.grid), "K_H")


def apply_KH_quadrature(h: GridFn, H, nodes: np.ndarray | None = None) -> np.ndarray:
    """Direct adaptive quadrature of int_0^t K_H(t,s) h(s) ds (slow; reference use).

    h is taken as its piecewise-linear interpolant. Returns values at ``nodes``
    (indices into the grid, default all).
    """
    spec = as_hurst(H)
    grid = h.grid
    idx = np.arange(grid.n) if nodes is None else np.asarray(nodes)
    out = np.zeros(idx.size)
    for k, i in enumerate(idx):
        t = grid.t[i]
        if t == 0:
            continue
        if spec.regime == STANDARD:
            out[k] = np.trapezoid(h.values[: i + 1], dx=grid.dt)
            continue
        a = spec.alpha
        right = -a if spec.regime == SINGULAR else 0.0
        interp = lambda s: np.interp(s, grid.t, h.values)  # noqa: E731
        val, _ = quad(lambda s: _kernel_scaled(t, s, spec, right) * interp(s), 0, t, weight="alg", wvar=(-a, right), limit=400,
                      epsabs=1e-11, epsrel=1e-9)
        out[k] = val
    return out


def _require_zero_start(h: GridFn, what: str):
    scale = max(1.0, h.sup())
    if abs(h.values[0]) > 1e-12 * scale:
        raise InvalidArgument(f"{what} needs a function vanishing at t = 0, got {h.values[0]}")


def apply_KH_inverse(h: GridFn, H) -> GridFn:
    """K_H^{-1} h for h with h(0) = 0 (differentiable-input form in every regime)."""
    _require_zero_start(h, "K_H^{-1}")
    slopes = np.diff(h.values) / h.grid.dt
    cells = kh_inverse_slopes(slopes, H, h.grid)
    return _checked(h.grid, cell_to_node(cells), "K_H^{-1}")


def _sigma_cells(sigma: GridFn) -> np.ndarray:
    cells = sigma.to_cells()
    if np.any(cells == 0):
        raise InvalidArgument("noise intensity vanishes on a cell")
    return cells


def apply_KH_sigma(f: GridFn, sigma: GridFn, H) -> GridFn:
    """(K_H^sigma f)(t) = int_0^t sigma_s d(K_H f)(s) as a Riemann-Stieltjes sum."""
    kf = kh_cells(f.to_cells(), H, f.grid)
    inc = np.diff(kf) * sigma.to_cells()
    out = np.concatenate([[0.0], np.cumsum(inc)])
    return _checked(f.grid, out, "K_H^sigma")


def inverse_KH_sigma(g: GridFn, sigma: GridFn, H) -> GridFn:
    _require_zero_start(g, "(K_H^sigma)^{-1}")
    cells = inverse_kh_sigma_cells(g.values, _sigma_cells(sigma), H, g.grid)
    return _checked(g.grid, cell_to_node(cells), "(K_H^sigma)^{-1}")


def velocity_dot(phi: GridFn, y0: float, sigma: GridFn, H) -> GridFn:
    """The density phi_dot with phi - y0 = K_H^sigma(phi_dot)."""
    scale = max(1.0, phi.sup())
    if abs(phi.values[0] - y0) > 1e-12 * scale:
        raise InvalidArgument(f"phi(0) = {phi.values[0]} differs from y0 = {y0}")
    return inverse_KH_sigma(phi - y0, sigma, H)


# --- sampling ------------------------------------------------------------------

def rng_for(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream)."""
    if seed < 0 or stream < 0:
        raise InvalidArgument("seed and stream must be non-negative")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


CHOLESKY_MAX_N = 4097


@lru_cache(maxsize=8)
def cholesky_factor(H, n: int) -> np.ndarray:
    """Lower Cholesky factor of R_H on nodes t_1..t_{n-1}, with escalating jitter."""
    spec = as_hurst(H)
    t = TimeGrid(n).t[1:]
    cov = covariance(t[:, None], t[None, :], spec)
    jitters = [0.0] + [1e-14 * 10**k for k in range(5)]
    for jitter in jitters:
        try:
            L = np.linalg.cholesky(cov + jitter * np.eye(n - 1))
        except np.linalg.LinAlgError:
            continue
        L.flags.writeable = False
        return L
    raise NumericalFailure(f"covariance matrix for H={spec.H}, n={n} is not positive definite")


@lru_cache(maxsize=4)
def synthesis_matrix(H, n: int) -> np.ndarray:
    """K_H(t_i, midpoint_j): maps Wiener increments on cells to B^H at nodes."""
    grid = TimeGrid(n)
    mat = kernel_matrix(grid.t[:, None], grid.midpoints[None, :], H)
    mat.flags.writeable = False
    return mat


@dataclass(frozen=True, eq=False)
class FbmPath:
    grid: TimeGrid
    wiener: GridFn
    fbm: GridFn
    H: HurstSpec
    seed: int
    stream: int
    method: str

    def metadata(self) -> dict:
        return {"H": self.H.H, "seed": self.seed, "stream": self.stream,
                "method": self.method, "n": self.grid.n}


def standard_normals(seed: int, streams, size: int) -> np.ndarray:
    """One row of ``size`` N(0,1) draws per stream; row k depends only on (seed, streams[k])."""
    streams = np.atleast_1d(np.asarray(streams, dtype=np.int64))
    out = np.empty((streams.size, size))
    for k, s in enumerate(streams):
        out[k] = rng_for(seed, int(s)).standard_normal(size)
    return out


def fbm_from_normals(z: np.ndarray, H, grid: TimeGrid, method: str) -> np.ndarray:
    """B^H at the nodes (B^H(0) = 0) from standard normals, one path per row."""
    spec = as_hurst(H)
    n = grid.n
    z = np.atleast_2d(z)
    out = np.zeros((z.shape[0], n))
    if method == "cholesky":
        if n > CHOLESKY_MAX_N:
            raise InvalidArgument(f"cholesky sampling is limited to n <= {CHOLESKY_MAX_N}, got {n}")
        if spec.regime == STANDARD:
            # the factor is exactly sqrt(dt) times the lower-triangular matrix of ones
            out[:, 1:] = np.cumsum(z, axis=1) * math.sqrt(grid.dt)
        else:
            out[:, 1:] = z @ cholesky_factor(spec, n).T
    elif method == "kernel_synthesis":
        out[:, 1:] = (z * math.sqrt(grid.dt)) @ synthesis_matrix(spec, n)[1:].T
    else:
        raise InvalidArgument(f"unknown sampling method {method!r}")
    return out


def sample_fbm(H, grid: TimeGrid, seed: int, stream: int = 0, method: str = "cholesky") -> FbmPath:
    """One B^H path on the grid.

    ``cholesky`` is exact in law on the nodes; ``kernel_synthesis`` uses
    B^H(t_i) = sum_j K_H(t_i, m_j) dW_j with the Wiener increments recorded in the path.
    Both use the same standard normals z, and W = cumsum(sqrt(dt) z).
    """
    spec = as_hurst(H)
    z = standard_normals(seed, [stream], grid.n - 1)
    bh = fbm_from_normals(z, spec, grid, method)[0]
    w = np.concatenate([[0.0], np.cumsum(z[0]) * math.sqrt(grid.dt)])
    return FbmPath(grid, GridFn(grid, w), GridFn(grid, bh), spec, seed, stream, method)


def write_fbm_csv(path: FbmPath, csv_path: str | Path):
    import json

    write_columns(csv_path, ["t", "W", "BH"], [path.grid.t, path.wiener.values, path.fbm.values])
    Path(str(csv_path) + ".meta.json").write_text(json.dumps(path.metadata(), indent=2))


# --- integration against B^H ------------------------------------------------------

def young_sums(sigma_nodes: np.ndarray, bh: np.ndarray) -> np.ndarray:
    """Left-point Riemann-Stieltjes sums int_0^t sigma dB^H (batched over rows of bh)."""
    inc = np.diff(bh, axis=-1) * np.asarray(sigma_nodes)[..., :-1]
    out = np.zeros(bh.shape)
    out[..., 1:] = np.cumsum(inc, axis=-1)
    return out


def young_integral(sigma: GridFn, path: FbmPath) -> GridFn:
    """int_0^t sigma_s dB^H_s along one sampled path."""
    if sigma.grid != path.grid:
        raise InvalidArgument("integrand and path live on different grids")
    return GridFn(path.grid, young_sums(sigma.values, path.fbm.values))


def increment_covariance(H, grid: TimeGrid) -> np.ndarray:
    """Exact covariance of the B^H increments over the cells.

    Equivalently, the cell-pair integrals of H(2H-1)|t - s|^(2H-2) for H > 1/2.
    """
    h2 = 2 * as_hurst(H).H
    k = np.abs(np.subtract.outer(np.arange(grid.n - 1), np.arange(grid.n - 1))).astype(float)
    return 0.5 * grid.dt**h2 * ((k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)


@dataclass(frozen=True)
class IsometryCheck:
    mc_estimate: float
    analytic: float
    std_error: float

    @property
    def z_score(self) -> float:
        if self.std_error == 0:
            return 0.0 if self.mc_estimate == self.analytic else math.inf
        return (self.mc_estimate - self.analytic) / self.std_error


def isometry_residual(f: GridFn, g: GridFn, H, n_mc: int, seed: int,
                      chunk: int = 2048) -> IsometryCheck:
    """Monte Carlo E[int f dB^H int g dB^H] against the double-integral value.

    The reference value integrates f and g (cell averages) against the exact cell
    moments of H(2H-1)|t-s|^(2H-2), which is the increment covariance of B^H.
    """
    spec = as_hurst(H)
    grid = f.grid
    gram = increment_covariance(spec, grid)
    analytic = float(f.to_cells() @ gram @ g.to_cells())
    prods = np.empty(n_mc)
    for start in range(0, n_mc, chunk):
        streams = np.arange(start, min(start + chunk, n_mc))
        z = standard_normals(seed, streams, grid.n - 1)
        bh = fbm_from_normals(z, spec, grid, "cholesky")
        inc = np.diff(bh, axis=1)
        prods[start:start + streams.size] = (inc @ f.values[:-1]) * (inc @ g.values[:-1])
    se = float(prods.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.inf
    return IsometryCheck(float(prods.mean()), analytic, se)
