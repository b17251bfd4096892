"""Onsager-Machlup functionals for X'' = f_t(X, X') + sigma_t xi^H_t with H in (1/4, 1)."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import InvalidArgument, NumericalFailure
from .fbm import HurstSpec, as_hurst, covariance, kernel_KH, sample_fbm, velocity_dot
from .fraccalc import frac_derivative, frac_integral
from .grid import GridFn, TimeGrid, holder_seminorm
from .models import ModelSpec, constant_noise, duffing, double_well, modulated_noise, pendulum, pendulum_k
from .montecarlo import EnsembleSpec, om_ratio_experiment, simulate_ensemble, tube_probability
from .mpp import BoundaryData, MppProblem, minimize_om, noiseless_shoot, solve_el_bvp
from .omfunctional import PathPair, check_assumption_A, d_H, om_functional

__all__ = [
    "InvalidArgument", "NumericalFailure", "HurstSpec", "as_hurst", "covariance", "kernel_KH",
    "sample_fbm", "velocity_dot", "frac_derivative", "frac_integral", "GridFn", "TimeGrid",
    "holder_seminorm", "ModelSpec", "constant_noise", "duffing", "double_well", "modulated_noise",
    "pendulum", "pendulum_k", "EnsembleSpec", "om_ratio_experiment", "simulate_ensemble",
    "tube_probability", "BoundaryData", "MppProblem", "minimize_om", "noiseless_shoot",
    "solve_el_bvp", "PathPair", "check_assumption_A", "d_H", "om_functional",
]
