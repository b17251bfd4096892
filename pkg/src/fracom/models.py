"""Force fields, potentials and noise intensities for X'' = f_t(X, X') + sigma_t xi^H_t.

All callables are vectorized: ``f(t, x, y)`` broadcasts over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InvalidArgument
from .grid import GridFn, TimeGrid

Field = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _zero(t, x, y):
    return np.zeros(np.broadcast(t, x, y).shape)


def _const(c: float) -> Field:
    def fn(t, x, y):
        return np.full(np.broadcast(t, x, y).shape, float(c))

    return fn


@dataclass(frozen=True)
class Force:
    """Drift f_t(x, y) with the partial derivatives the OM machinery needs."""

    f: Field
    dfdx: Field
    dfdy: Field
    dfdxy: Field = _zero
    dfdyy: Field = _zero
    lipschitz: float | None = None  # None: not globally Lipschitz
    bound: float | None = None  # sup |f|, None when unbounded
    name: str = "custom"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Potential:
    V: Callable[[np.ndarray], np.ndarray]
    dV: Callable[[np.ndarray], np.ndarray]
    d2V: Callable[[np.ndarray], np.ndarray]
    d3V: Callable[[np.ndarray], np.ndarray]
    d4V: Callable[[np.ndarray], np.ndarray] | None = None
    coefficients: tuple[float, ...] | None = None

    @classmethod
    def from_coefficients(cls, coefficients) -> "Potential":
        """Polynomial potential sum_k c_k x^k (lowest degree first)."""
        p = Polynomial(np.asarray(coefficients, dtype=float))
        return cls(p, p.deriv(1), p.deriv(2), p.deriv(3), p.deriv(4),
                   tuple(float(c) for c in coefficients))


def double_well() -> Potential:
    """V(x) = (x^4 - 2 x^2) / 4, minima at x = +-1."""
    return Potential.from_coefficients([0.0, 0.0, -0.5, 0.0, 0.25])


@dataclass(frozen=True)
class NoiseIntensity:
    """Deterministic sigma_t with known bounds m <= sigma <= M."""

    sigma: Callable[[np.ndarray], np.ndarray]
    m: float
    M: float
    holder_gamma: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def on(self, grid: TimeGrid) -> GridFn:
        return grid.sample(self.sigma)


def constant_noise(c: float) -> NoiseIntensity:
    c = float(c)
    return NoiseIntensity(lambda t: np.full(np.shape(t), c), abs(c), abs(c),
                          name="constant", params={"c": c})


def modulated_noise(sigma0: float, amplitude: float, omega: float, kind: str = "cos") -> NoiseIntensity:
    """sigma_t = sigma0 + A cos(omega t) (or sin)."""
    if kind not in ("cos", "sin"):
        raise InvalidArgument(f"modulation must be 'cos' or 'sin', got {kind!r}")
    trig = np.cos if kind == "cos" else np.sin
    s0, a, w = float(sigma0), float(amplitude), float(omega)
    # exact bounds over [0, 1]: endpoints plus the critical points of the trig factor
    shift = 0.0 if kind == "cos" else 0.5 * math.pi
    crit = []
    if w != 0:
        ks = np.arange(math.floor(-abs(w) / math.pi) - 1, math.ceil(abs(w) / math.pi) + 2)
        crit = (shift + ks * math.pi) / w
    t = np.concatenate([[0.0, 1.0], [c for c in crit if 0 <= c <= 1]])
    vals = s0 + a * trig(w * t)
    m = float(vals.min()) if np.all(vals > 0) else 0.0
    return NoiseIntensity(lambda t: s0 + a * trig(w * np.asarray(t, dtype=float)),
                          m, float(np.abs(vals).max()),
                          name=f"modulated_{kind}", params={"sigma0": s0, "A": a, "omega": w})


def pendulum_k() -> float:
    """k = (sqrt(pi) Gamma(1/4) / Gamma(3/4))^2 / 2: the swing from -pi/2 to pi/2 takes unit time."""
    return 0.5 * (math.sqrt(math.pi) * math.gamma(0.25) / math.gamma(0.75)) ** 2


def pendulum(k: float | None = None, gamma: float = 0.0) -> Force:
    """f = -gamma y - k sin(x)."""
    k = pendulum_k() if k is None else float(k)
    g = float(gamma)
    return Force(
        f=lambda t, x, y: -g * y - k * np.sin(x) + 0 * t,
        dfdx=lambda t, x, y: -k * np.cos(x) + 0 * t + 0 * y,
        dfdy=_const(-g),
        lipschitz=max(abs(k), abs(g)),
        bound=abs(k) if g == 0 else None,
        name="pendulum",
        params={"k": k, "gamma": g},
    )


def potential_force(potential: Potential, gamma: float = 0.0, name: str = "duffing") -> Force:
    """f = -gamma y - V'(x)."""
    g = float(gamma)
    return Force(
        f=lambda t, x, y: -g * y - potential.dV(x) + 0 * t,
        dfdx=lambda t, x, y: -potential.d2V(x) + 0 * t + 0 * y,
        dfdy=_const(-g),
        name=name,
        params={"gamma": g, "potential": potential.coefficients},
    )


def duffing(gamma: float = 0.1, potential: Potential | None = None) -> Force:
    return potential_force(potential or double_well(), gamma, "duffing")


def forced_duffing(delta: float, alpha: float, beta: float, gamma: float, omega: float) -> Force:
    """X'' + delta X' + alpha X + beta X^3 = gamma cos(omega t)."""
    d, a, b, g, w = map(float, (delta, alpha, beta, gamma, omega))
    return Force(
        f=lambda t, x, y: -d * y - a * x - b * x**3 + g * np.cos(w * t),
        dfdx=lambda t, x, y: -a - 3 * b * x**2 + 0 * t + 0 * y,
        dfdy=_const(-d),
        name="forced_duffing",
        params={"delta": d, "alpha": a, "beta": b, "gamma": g, "omega": w},
    )


def linear_force(a: float, b: float = 0.0) -> Force:
    """f = a x + b y (a = -omega^2 gives the harmonic oscillator)."""
    a, b = float(a), float(b)
    return Force(
        f=lambda t, x, y: a * x + b * y + 0 * t,
        dfdx=_const(a),
        dfdy=_const(b),
        lipschitz=max(abs(a), abs(b)),
        name="linear",
        params={"a": a, "b": b},
    )


def zero_force() -> Force:
    return Force(_zero, _zero, _zero, lipschitz=0.0, bound=0.0, name="zero")


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the Newton system: drift and time-dependent noise intensity."""

    force: Force
    noise: NoiseIntensity
    lipschitz_L: float | None = None
    bound_F: float | None = None

    def __post_init__(self):
        if self.lipschitz_L is None:
            object.__setattr__(self, "lipschitz_L", self.force.lipschitz)
        if self.bound_F is None:
            object.__setattr__(self, "bound_F", self.force.bound)

    @property
    def m(self) -> float:
        return self.noise.m

    @property
    def M(self) -> float:
        return self.noise.M

    def sigma_on(self, grid: TimeGrid) -> GridFn:
        return self.noise.on(grid)

    def f(self, t, x, y):
        return self.force.f(t, x, y)
