from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracom.errors import InvalidArgument
from fracom.grid import TimeGrid, read_columns
from fracom.models import ModelSpec, constant_noise, double_well, linear_force, modulated_noise, pendulum, zero_force
from fracom.mpp import (PRINTED, BoundaryData, MppOptions, MppProblem, _Objective, duffing_model, el_residual,
                        hermite_path, minimize_om, noiseless_shoot, perturbation_check, solve_el_bvp,
                        write_solution)
from fracom.omfunctional import PathPair, om_functional


def test_noiseless_free_motion():
    g = TimeGrid(65)
    p = noiseless_shoot(ModelSpec(zero_force(), constant_noise(1.0)), 0.5, -2.0, g)
    assert np.allclose(p.psi.values, 0.5 - 2 * g.t, atol=1e-14)
    assert np.allclose(p.phi.values, -2.0, atol=1e-14)


def test_noiseless_harmonic_oscillator():
    g = TimeGrid(10001)
    p = noiseless_shoot(ModelSpec(linear_force(-math.pi**2), constant_noise(1.0)), 1.0, 0.0, g)
    assert np.max(np.abs(p.psi.values - np.cos(math.pi * g.t))) < 1e-8


def test_noiseless_pendulum_swing_takes_unit_time():
    g = TimeGrid(4097)
    p = noiseless_shoot(ModelSpec(pendulum(), constant_noise(1.0)), -math.pi / 2, 0.0, g)
    # swing from rest at -pi/2 reaches rest at +pi/2 at t = 1
    assert abs(p.x1 - math.pi / 2) < 1e-6
    assert abs(p.y1) < 1e-5


def test_trapezoid_scheme_close_to_rk4():
    g = TimeGrid(513)
    model = ModelSpec(pendulum(gamma=0.1), constant_noise(1.0))
    a = noiseless_shoot(model, 0.0, 2.0, g)
    b = noiseless_shoot(model, 0.0, 2.0, g, scheme="trapezoid")
    assert np.max(np.abs(a.psi.values - b.psi.values)) < 1e-3
    with pytest.raises(InvalidArgument):
        noiseless_shoot(model, 0.0, 2.0, g, scheme="euler")


@settings(max_examples=20)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_hermite_path_matches_boundary(x0, y0, x1, y1):
    g = TimeGrid(65)
    p = hermite_path(BoundaryData(x0, y0, x1, y1), g)
    assert p.boundary == pytest.approx((x0, y0, x1, y1), abs=1e-12)
    # psi is the exact cubic, so the trapezoid antiderivative of phi lags by O(dt^2)
    assert p.consistency_error() <= (abs(y0) + abs(y1) + 6 * abs(x1 - x0)) * g.dt**2 + 1e-14


def test_problem_validation():
    model = ModelSpec(zero_force(), constant_noise(1.0))
    b = BoundaryData(0, 0, 1, 1)
    with pytest.raises(InvalidArgument):
        MppProblem(model, 0.5, b, TimeGrid(17))
    with pytest.raises(InvalidArgument):
        MppProblem(model, 0.5, b, TimeGrid(65), init="quadratic")
    assert MppProblem(model, 0.5, b, TimeGrid(65), init="linear").init == "hermite"
    with pytest.raises(InvalidArgument):
        MppProblem(model, 0.5, b, TimeGrid(65), options=MppOptions(constraint="lagrange"))
    with pytest.raises(InvalidArgument):
        BoundaryData(0, 0, math.nan, 0)


def test_free_particle_standard_case_gives_affine_velocity():
    # f = 0, H = 1/2: maximize -1/2 int phi'^2; phi = t fits psi(1) = 1/2
    g = TimeGrid(129)
    prob = MppProblem(ModelSpec(zero_force(), constant_noise(1.0)), 0.5, BoundaryData(0, 0, 0.5, 1), g,
                      options=MppOptions(starts=3))
    sol = minimize_om(prob)
    assert sol.converged
    assert np.max(np.abs(sol.path.phi.values - g.t)) < 1e-7
    assert sol.J.J == pytest.approx(-0.5, abs=1e-9)


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_constraints_and_monotone_history(H):
    g = TimeGrid(65)
    model = ModelSpec(pendulum(gamma=0.2), modulated_noise(2.0, 1.0, 10.0))
    b = BoundaryData(0.0, 1.0, 0.3, -0.5)
    sol = minimize_om(MppProblem(model, H, b, g, init="hermite"))
    assert sol.constraint_residual < 1e-10
    assert abs(sol.path.x1 - 0.3) < 1e-10 and abs(sol.path.y1 + 0.5) < 1e-10
    hist = np.array(sol.history)
    assert np.all(np.diff(hist) >= -1e-10 * (1 + np.abs(hist[1:])))


@pytest.mark.parametrize("H", [0.3, 0.5, 0.7])
def test_adjoint_gradient_matches_finite_differences(H):
    g = TimeGrid(41)
    model = ModelSpec(pendulum(gamma=0.3), modulated_noise(2.0, 0.5, 7.0))
    obj = _Objective(MppProblem(model, H, BoundaryData(0.1, 0.5, 0.0, 0.0), g))
    phi = 0.5 + np.sin(3 * g.t) * g.t
    z = obj.z_from_phi(phi)
    J, gphi = obj.value_grad_phi(phi)
    Jfd, gfd = obj._fd(z)
    assert J == pytest.approx(Jfd, rel=1e-13)
    gz = obj._T_adj(gphi)
    assert np.max(np.abs(gz - gfd)) < 1e-6 * np.max(np.abs(gz))


def test_penalty_mode_agrees_with_null_space():
    g = TimeGrid(65)
    model = ModelSpec(pendulum(), constant_noise(2.0))
    b = BoundaryData(0.0, 0.0, 0.2, 0.0)
    a = minimize_om(MppProblem(model, 0.3, b, g, init="hermite"))
    p = minimize_om(MppProblem(model, 0.3, b, g, init="hermite", options=MppOptions(constraint="penalty")))
    assert abs(p.path.x1 - 0.2) < 1e-6
    assert abs(a.J.J - p.J.J) < 1e-4 * (1 + abs(a.J.J))


def test_fd_gradient_mode_runs():
    g = TimeGrid(33)
    model = ModelSpec(linear_force(-1.0), constant_noise(1.0))
    b = BoundaryData(0.0, 0.0, 0.1, 0.0)
    a = minimize_om(MppProblem(model, 0.5, b, g, init="hermite"))
    f = minimize_om(MppProblem(model, 0.5, b, g, init="hermite", options=MppOptions(gradient="fd")))
    assert abs(a.J.J - f.J.J) < 1e-6


def test_multistart_is_deterministic_and_threads_agree():
    g = TimeGrid(65)
    model = ModelSpec(pendulum(), constant_noise(1.5))
    b = BoundaryData(0.0, 1.0, 0.5, 0.0)
    s1 = minimize_om(MppProblem(model, 0.7, b, g, options=MppOptions(starts=4, seed=3)))
    s2 = minimize_om(MppProblem(model, 0.7, b, g, options=MppOptions(starts=4, seed=3, threads=2)))
    assert s1.J.J == s2.J.J and s1.best_start == s2.best_start
    assert s1.starts_tried == 4
    assert s1.J.J >= max(s1.extras["start_J"]) - 1e-10


def test_noiseless_boundary_recovers_noiseless_path():
    g = TimeGrid(129)
    model = ModelSpec(pendulum(gamma=0.1), modulated_noise(2.0, 1.5, 10.0))
    ref = noiseless_shoot(model, 0.0, 1.0, g, scheme="trapezoid")
    b = BoundaryData(0.0, 1.0, ref.x1, ref.y1)
    sol = minimize_om(MppProblem(model, 0.3, b, g, init="hermite"))
    assert np.max(np.abs(sol.path.psi.values - ref.psi.values)) < 1e-5


def test_perturbation_check_confirms_maximum():
    g = TimeGrid(65)
    model = ModelSpec(pendulum(), constant_noise(2.0))
    prob = MppProblem(model, 0.5, BoundaryData(0.0, 0.0, 0.3, 0.0), g, init="hermite")
    sol = minimize_om(prob)
    center, others = perturbation_check(prob, sol.path, count=10)
    assert center == pytest.approx(sol.J.J, abs=1e-10)
    assert np.all(others < center)


# --- Euler-Lagrange ---------------------------------------------------------------

@pytest.mark.parametrize("H", [0.3, 0.5, 0.7])
def test_el_residual_vanishes_on_noiseless_path(H):
    g = TimeGrid(257)
    model = ModelSpec(pendulum(gamma=0.2), modulated_noise(2.0, 0.5, 5.0))
    path = noiseless_shoot(model, 0.0, 1.0, g, scheme="trapezoid")
    res = el_residual(path, model, H)
    assert np.max(np.abs(res.values)) < 1e-5
    assert np.all(res.values[[0, 1, -2, -1]] == 0)


def test_el_residual_free_particle_affine_velocity():
    g = TimeGrid(129)
    path = PathPair.from_velocity(g.sample(lambda t: 1 + 2 * t), 0.0)
    res = el_residual(path, ModelSpec(zero_force(), constant_noise(1.0)), 0.5)
    assert np.max(np.abs(res.values)) < 1e-8


def test_el_residual_printed_variant_differs():
    g = TimeGrid(129)
    model = duffing_model(0.1, 3.0)
    path = hermite_path(BoundaryData(-1, 0, 1, 0), g)
    a = el_residual(path, model, 0.5)
    b = el_residual(path, model, 0.5, variant=PRINTED)
    assert np.max(np.abs(a.values - b.values)) > 1e-3
    with pytest.raises(InvalidArgument):
        el_residual(path, model, 0.5, variant="other")


def test_el_residual_decreases_on_refinement_for_duffing():
    b = BoundaryData(-1, 0, 1, 0)
    errs = []
    for n in (65, 129, 257):
        g = TimeGrid(n)
        sol = minimize_om(MppProblem(duffing_model(0.1, 3.0), 0.5, b, g, init="hermite"))
        res = el_residual(sol.path, duffing_model(0.1, 3.0), 0.5).values
        errs.append(np.max(np.abs(res[g.t > 0.1][: -max(1, n // 10)])))
    assert errs[1] < errs[0] and errs[2] < errs[1]


def test_bvp_equilibrium_is_exact():
    g = TimeGrid(65)
    sol = solve_el_bvp(double_well(), 0.1, BoundaryData(1, 0, 1, 0), g)
    assert sol.converged
    assert np.max(np.abs(sol.path.psi.values - 1)) < 1e-12
    assert sol.J.J == pytest.approx(0.05, abs=1e-12)  # only the divergence gamma/2 survives


def test_bvp_transition_symmetry_and_agreement():
    g = TimeGrid(257)
    b = BoundaryData(-1, 0, 1, 0)
    bvp = solve_el_bvp(double_well(), 0.0, b, g, sigma=3.0)
    assert bvp.converged
    mid = bvp.path.psi.values[128]
    assert abs(mid) < 1e-8
    assert np.allclose(bvp.path.psi.values, -bvp.path.psi.values[::-1], atol=1e-7)
    direct = minimize_om(MppProblem(duffing_model(0.0, 3.0), 0.5, b, g, init="hermite"))
    assert abs(direct.J.J - bvp.J.J) < 1e-3 * abs(bvp.J.J)


def test_write_solution(tmp_path):
    g = TimeGrid(33)
    sol = minimize_om(MppProblem(ModelSpec(zero_force(), constant_noise(1.0)), 0.5,
                                 BoundaryData(0, 0, 0.5, 1), g, options=MppOptions(starts=1)))
    summary = write_solution(sol, tmp_path, "mpp")
    header, cols = read_columns(tmp_path / "mpp.csv")
    assert header == ["t", "psi", "phi"]
    assert np.array_equal(cols[2], sol.path.phi.values)
    rec = json.loads((tmp_path / "mpp_summary.json").read_text())
    assert rec["J"] == summary["J"] == sol.J.J
