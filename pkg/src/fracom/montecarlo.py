"""Monte Carlo for the degenerate system dX = Y dt, dY = f_t(X, Y) dt + sigma_t dB^H_t.

Paths are generated in fixed-size chunks. Path k always uses the random stream
(seed, k), and per-chunk partial sums are combined in chunk order, so every result
is bit-identical whatever the number of worker threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .fbm import CHOLESKY_MAX_N, as_hurst, fbm_from_normals, standard_normals, young_sums
from .grid import GridFn, TimeGrid, holder_seminorms, write_columns
from .models import ModelSpec
from .omfunctional import PathPair, default_beta, om_functional

Z95 = NormalDist().inv_cdf(0.975)
POSITION = "position_norm"
NOISE = "noise_norm"


@dataclass(frozen=True)
class EnsembleSpec:
    model: ModelSpec
    H: float
    x0: float
    y0: float
    n_steps: int
    n_paths: int
    seed: int = 0
    method: str = "auto"  # cholesky up to CHOLESKY_MAX_N nodes, kernel synthesis beyond
    chunk: int = 2048
    threads: int = 1
    store_paths: int = 0

    def __post_init__(self):
        as_hurst(self.H)
        if int(self.n_steps) != self.n_steps or self.n_steps < 64:
            raise InvalidArgument(f"n_steps must be an integer >= 64, got {self.n_steps}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise InvalidArgument(f"n_paths must be a positive integer, got {self.n_paths}")
        if self.seed < 0:
            raise InvalidArgument("seed must be non-negative")
        if self.chunk < 1 or self.threads < 1:
            raise InvalidArgument("chunk and threads must be positive")
        if self.method not in ("auto", "cholesky", "kernel_synthesis"):
            raise InvalidArgument(f"unknown sampling method {self.method!r}")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.n_steps + 1)

    @property
    def sampler(self) -> str:
        if self.method != "auto":
            return self.method
        return "cholesky" if self.n_steps + 1 <= CHOLESKY_MAX_N else "kernel_synthesis"

    def provenance(self) -> dict:
        return {"seed": self.seed, "n_paths": self.n_paths, "n_steps": self.n_steps,
                "H": float(self.H), "x0": self.x0, "y0": self.y0, "sampler": self.sampler,
                "streams": f"(seed, k) for k in 0..{self.n_paths - 1}", "chunk": self.chunk}


@dataclass(frozen=True)
class _Chunk:
    streams: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    BH: np.ndarray
    ok: np.ndarray  # rows that stayed finite


def _simulate_chunk(spec: EnsembleSpec, streams: np.ndarray) -> _Chunk:
    """Explicit Euler with left-point sigma and exact fBm increments."""
    grid = spec.grid
    t, dt = grid.t, grid.dt
    z = standard_normals(spec.seed, streams, spec.n_steps)
    bh = fbm_from_normals(z, spec.H, grid, spec.sampler)
    dB = np.diff(bh, axis=1)
    sigma = spec.model.sigma_on(grid).values
    f = spec.model.force.f
    k = streams.size
    X = np.empty((k, grid.n))
    Y = np.empty((k, grid.n))
    X[:, 0], Y[:, 0] = spec.x0, spec.y0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(spec.n_steps):
            x, y = X[:, i], Y[:, i]
            X[:, i + 1] = x + y * dt
            Y[:, i + 1] = y + f(t[i], x, y) * dt + sigma[i] * dB[:, i]
    ok = np.all(np.isfinite(X), axis=1) & np.all(np.isfinite(Y), axis=1)
    return _Chunk(streams, X, Y, bh, ok)


def _map_chunks(spec: EnsembleSpec, fn: Callable[[_Chunk], object]) -> list:
    bounds = [(s, min(s + spec.chunk, spec.n_paths)) for s in range(0, spec.n_paths, spec.chunk)]

    def work(b):
        return fn(_simulate_chunk(spec, np.arange(*b)))

    if spec.threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            return list(pool.map(work, bounds))
    return [work(b) for b in bounds]


@dataclass(frozen=True)
class EnsembleResult:
    mean_x: GridFn
    mean_y: GridFn
    n_paths: int
    n_diverged: int
    paths_x: np.ndarray | None = None
    paths_y: np.ndarray | None = None
    hit_counts: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {"n_paths": self.n_paths, "n_diverged": self.n_diverged,
               "n_used": self.n_paths - self.n_diverged, **self.provenance}
        for label, (hits, trials) in self.hit_counts.items():
            rec[f"{label}_hits"] = hits
            rec[f"{label}_trials"] = trials
        return rec

    def write_mean_csv(self, path: str | Path):
        write_columns(path, ["t", "mean_x", "mean_y"],
                      [self.mean_x.t, self.mean_x.values, self.mean_y.values])

    def write_paths_csv(self, directory: str | Path):
        if self.paths_x is None:
            raise InvalidArgument("no paths were stored (set store_paths > 0)")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        t = self.mean_x.t
        for k in range(self.paths_x.shape[0]):
            write_columns(directory / f"path_{k:05d}.csv", ["t", "x", "y"],
                          [t, self.paths_x[k], self.paths_y[k]])


def simulate_ensemble(spec: EnsembleSpec) -> EnsembleResult:
    """Mean trajectories over all non-diverged paths (diverged ones are counted)."""
    keep = spec.store_paths

    def reduce(c: _Chunk):
        Xok, Yok = c.X[c.ok], c.Y[c.ok]
        stored = None
        if keep and c.streams[0] < keep:
            m = int(min(keep - c.streams[0], c.streams.size))
            stored = (c.X[:m], c.Y[:m])
        return Xok.sum(axis=0), Yok.sum(axis=0), int(c.ok.sum()), stored

    parts = _map_chunks(spec, reduce)
    used = sum(p[2] for p in parts)
    if used == 0:
        raise InvalidArgument("every path diverged; no mean can be formed")
    sx = np.zeros(spec.grid.n)
    sy = np.zeros(spec.grid.n)
    for px, py, _, _ in parts:  # chunk order, independent of scheduling
        sx += px
        sy += py
    stored = [p[3] for p in parts if p[3] is not None]
    paths_x = np.vstack([s[0] for s in stored]) if stored else None
    paths_y = np.vstack([s[1] for s in stored]) if stored else None
    grid = spec.grid
    return EnsembleResult(GridFn(grid, sx / used), GridFn(grid, sy / used), spec.n_paths,
                          spec.n_paths - used, paths_x, paths_y, {}, spec.provenance())


def write_ensemble(result: EnsembleResult, directory: str | Path) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    result.write_mean_csv(directory / "mean.csv")
    rec = result.to_record()
    (directory / "summary.json").write_text(json.dumps(rec, indent=2, sort_keys=True, default=str))
    return rec


# --- tubes ----------------------------------------------------------------------

def wilson_interval(hits: int, trials: int, z: float = Z95) -> tuple[float, float]:
    if trials <= 0:
        raise InvalidArgument("a proportion needs at least one trial")
    p = hits / trials
    denom = 1 + z**2 / trials
    centre = (p + z**2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == trials else min(1.0, centre + half)
    return (lo, hi)


@dataclass(frozen=True)
class TubeEstimate:
    p_hat: float
    hits: int
    trials: int
    wilson_ci: tuple[float, float]
    n_diverged: int
    epsilon: float
    beta: float
    mode: str

    def to_record(self) -> dict:
        return {"p_hat": self.p_hat, "hits": self.hits, "trials": self.trials,
                "ci_low": self.wilson_ci[0], "ci_high": self.wilson_ci[1],
                "n_diverged": self.n_diverged, "epsilon": self.epsilon, "beta": self.beta,
                "mode": self.mode}


def _check_beta_for(spec: EnsembleSpec, beta: float | None) -> float:
    beta = default_beta(spec.H) if beta is None else float(beta)
    if not 0 < beta < 1:
        raise InvalidArgument(f"beta must lie in (0, 1), got {beta}")
    return beta


def _deviation(c: _Chunk, spec: EnsembleSpec, mode: str, center: PathPair | None) -> np.ndarray:
    """The rows whose beta-seminorm is compared with epsilon."""
    if mode == POSITION:
        # [X' - phi]_beta with X' = Y exactly for the continuous interpolant of the scheme
        return c.Y[c.ok] - center.phi.values
    if mode == NOISE:
        sigma = spec.model.sigma_on(spec.grid).values
        return young_sums(sigma, c.BH[c.ok])
    raise InvalidArgument(f"unknown tube mode {mode!r}")


def _inside(dev: np.ndarray, dt: float, beta: float, epsilon: float) -> np.ndarray:
    """Boolean tube membership; a sup-norm prefilter skips most far-away rows."""
    out = np.zeros(dev.shape[0], dtype=bool)
    if epsilon == math.inf:
        out[:] = True
        return out
    # |g(t) - g(0)| <= [g]_beta t^beta <= [g]_beta on [0, 1]
    near = np.flatnonzero(np.max(np.abs(dev - dev[:, :1]), axis=1) <= epsilon)
    if near.size:
        semi = holder_seminorms(dev[near], dt, beta, threshold=epsilon)
        out[near] = semi <= epsilon
    return out


def _check_center(spec: EnsembleSpec, center: PathPair):
    if center.grid != spec.grid:
        raise InvalidArgument("tube center must live on the simulation grid")
    if abs(center.x0 - spec.x0) > 1e-12 or abs(center.y0 - spec.y0) > 1e-12:
        raise InvalidArgument("tube center must start at the ensemble's (x0, y0)")


def tube_probability(spec: EnsembleSpec, center: PathPair | None, epsilon: float,
                     beta: float | None = None, mode: str = POSITION) -> TubeEstimate:
    """Fraction of paths in the epsilon-tube, with a Wilson 95% interval.

    ``position_norm``: [X' - phi]_beta <= epsilon around ``center``.
    ``noise_norm``: [int sigma dB^H]_beta <= epsilon (``center`` is ignored).
    """
    if not epsilon >= 0:
        raise InvalidArgument("epsilon must be non-negative")
    beta = _check_beta_for(spec, beta)
    if mode == POSITION:
        if center is None:
            raise InvalidArgument("the position tube needs a center path")
        _check_center(spec, center)
    dt = spec.grid.dt

    def count(c: _Chunk):
        dev = _deviation(c, spec, mode, center)
        return int(_inside(dev, dt, beta, epsilon).sum()), int(c.ok.sum())

    parts = _map_chunks(spec, count)
    hits = sum(p[0] for p in parts)
    trials = sum(p[1] for p in parts)
    if trials == 0:
        raise InvalidArgument("no usable trials (every path diverged)")
    return TubeEstimate(hits / trials, hits, trials, wilson_interval(hits, trials),
                        spec.n_paths - trials, float(epsilon), beta, mode)


# --- the OM ratio experiment ---------------------------------------------------

@dataclass(frozen=True)
class RatioResult:
    log_ratio_mc: float
    log_ratio_se: float
    delta_J: float
    hits1: int
    hits2: int
    trials: int
    n_diverged: int
    epsilon: float
    beta: float
    inconclusive: bool
    note: str = ""

    @property
    def agreement(self) -> float:
        """|log_ratio_mc - delta_J| / |delta_J| (nan when inconclusive or delta_J = 0)."""
        if self.inconclusive or self.delta_J == 0:
            return math.nan
        return abs(self.log_ratio_mc - self.delta_J) / abs(self.delta_J)

    def to_record(self) -> dict:
        return {"log_ratio_mc": self.log_ratio_mc, "log_ratio_se": self.log_ratio_se,
                "delta_J": self.delta_J, "agreement": self.agreement, "hits1": self.hits1,
                "hits2": self.hits2, "trials": self.trials, "n_diverged": self.n_diverged,
                "epsilon": self.epsilon, "beta": self.beta, "inconclusive": self.inconclusive,
                "note": self.note}


MIN_RATIO_HITS = 100


def om_ratio_experiment(spec: EnsembleSpec, psi1: PathPair, psi2: PathPair, epsilon: float,
                        beta: float | None = None) -> RatioResult:
    """Compare log P(tube psi1) / P(tube psi2) with J(psi1) - J(psi2).

    Both tubes are scored on the same simulated paths. The standard error of the log
    ratio includes the covariance between the two indicators.
    """
    _check_center(spec, psi1)
    _check_center(spec, psi2)
    beta = _check_beta_for(spec, beta)
    dt = spec.grid.dt
    same = np.array_equal(psi1.psi.values, psi2.psi.values) and np.array_equal(psi1.phi.values, psi2.phi.values)

    def count(c: _Chunk):
        a = _inside(_deviation(c, spec, POSITION, psi1), dt, beta, epsilon)
        b = a if same else _inside(_deviation(c, spec, POSITION, psi2), dt, beta, epsilon)
        return int(a.sum()), int(b.sum()), int((a & b).sum()), int(c.ok.sum())

    parts = _map_chunks(spec, count)
    h1, h2, h12, trials = (sum(p[k] for p in parts) for k in range(4))
    delta_J = om_functional(psi1, spec.model, spec.H).J - om_functional(psi2, spec.model, spec.H).J
    if same:
        delta_J = 0.0
    n_div = spec.n_paths - trials
    note = f"{n_div} diverged paths excluded" if n_div else ""
    if h1 == 0 or h2 == 0:
        return RatioResult(math.nan, math.nan, delta_J, h1, h2, trials, n_div, float(epsilon), beta,
                           True, (note + "; " if note else "") + "zero hits in a tube")
    p1, p2, p12 = h1 / trials, h2 / trials, h12 / trials
    var = ((1 - p1) / p1 + (1 - p2) / p2 - 2 * (p12 - p1 * p2) / (p1 * p2)) / trials
    few = min(h1, h2) < MIN_RATIO_HITS
    if few:
        note = (note + "; " if note else "") + f"fewer than {MIN_RATIO_HITS} hits in a tube"
    return RatioResult(math.log(h1 / h2), math.sqrt(max(var, 0.0)), delta_J, h1, h2, trials, n_div,
                       float(epsilon), beta, few, note)


# --- small balls -----------------------------------------------------------------

@dataclass(frozen=True)
class SmallBallResult:
    slope_fit: float
    intercept: float
    points: tuple[tuple[float, float, int, int], ...]  # (epsilon, x = eps^(-1/(H-beta)), hits, trials)
    dropped: tuple[float, ...] = ()

    def to_record(self) -> dict:
        return {"slope_fit": self.slope_fit, "intercept": self.intercept,
                "points": [list(p) for p in self.points], "dropped": list(self.dropped)}


def small_ball_diagnostic(spec: EnsembleSpec, beta: float, eps_list, min_hits: int = 10) -> SmallBallResult:
    """Least-squares slope of log P(||int sigma dB^H||_beta <= eps) against eps^(-1/(H-beta)).

    A diagnostic only: the fitted slope is reported without any pass/fail claim.
    """
    H = as_hurst(spec.H).H
    eps = [float(e) for e in eps_list]
    if len(eps) < 2:
        raise InvalidArgument("a slope needs at least two epsilon values")
    if not 0 < beta < H:
        raise InvalidArgument(f"need 0 < beta < H, got beta={beta}, H={H}")
    if any(e <= 0 for e in eps):
        raise InvalidArgument("epsilon values must be positive")
    dt = spec.grid.dt
    top = max(eps)

    def norms(c: _Chunk):
        dev = _deviation(c, spec, NOISE, None)
        return holder_seminorms(dev, dt, beta, threshold=top) if dev.shape[0] else np.zeros(0)

    semi = np.concatenate(_map_chunks(spec, norms))
    trials = semi.size
    if trials == 0:
        raise InvalidArgument("no usable trials (every path diverged)")
    points, dropped = [], []
    for e in eps:
        hits = int(np.sum(semi <= e))
        if hits < min_hits:
            dropped.append(e)
        else:
            points.append((e, e ** (-1 / (H - beta)), hits, trials))
    if len(points) < 2:
        raise InvalidArgument(f"fewer than two epsilon values reached {min_hits} hits")
    x = np.array([p[1] for p in points])
    y = np.log([p[2] / p[3] for p in points])
    slope, intercept = np.polyfit(x, y, 1)
    return SmallBallResult(float(slope), float(intercept), tuple(points), tuple(dropped))


__all__ = [
    "EnsembleSpec", "EnsembleResult", "simulate_ensemble", "write_ensemble", "wilson_interval",
    "TubeEstimate", "tube_probability", "RatioResult", "om_ratio_experiment", "SmallBallResult",
    "small_ball_diagnostic", "POSITION", "NOISE", "MIN_RATIO_HITS",
]
