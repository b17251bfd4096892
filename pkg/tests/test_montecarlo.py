from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracom.errors import InvalidArgument
from fracom.fbm import fbm_from_normals, standard_normals
from fracom.grid import GridFn
from fracom.models import Force, ModelSpec, constant_noise, linear_force, modulated_noise, pendulum, zero_force
from fracom.montecarlo import (NOISE, POSITION, EnsembleSpec, om_ratio_experiment, simulate_ensemble,
                               small_ball_diagnostic, tube_probability, wilson_interval, write_ensemble)
from fracom.mpp import noiseless_shoot
from fracom.omfunctional import PathPair


def _free(sigma=1.0):
    return ModelSpec(zero_force(), constant_noise(sigma))


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        EnsembleSpec(_free(), 0.5, 0, 0, n_steps=32, n_paths=10)
    with pytest.raises(InvalidArgument):
        EnsembleSpec(_free(), 0.5, 0, 0, n_steps=64, n_paths=0)
    with pytest.raises(InvalidArgument):
        EnsembleSpec(_free(), 1.2, 0, 0, n_steps=64, n_paths=10)
    with pytest.raises(InvalidArgument):
        EnsembleSpec(_free(), 0.5, 0, 0, n_steps=64, n_paths=10, method="davies_harte")


@pytest.mark.parametrize("H", [0.3, 0.5, 0.7])
def test_zero_drift_velocity_is_scaled_fbm(H):
    spec = EnsembleSpec(_free(2.0), H, 0.0, 0.5, n_steps=64, n_paths=8, seed=4, store_paths=8)
    res = simulate_ensemble(spec)
    bh = fbm_from_normals(standard_normals(4, np.arange(8), 64), H, spec.grid, spec.sampler)
    assert np.max(np.abs(res.paths_y - 0.5 - 2.0 * bh)) < 1e-12


def test_zero_noise_gives_free_motion():
    model = ModelSpec(zero_force(), modulated_noise(0.0, 0.0, 1.0))
    spec = EnsembleSpec(model, 0.7, 1.0, -1.0, n_steps=64, n_paths=5)
    res = simulate_ensemble(spec)
    assert np.allclose(res.mean_x.values, 1.0 - spec.grid.t, atol=1e-14)


def test_results_do_not_depend_on_threads_or_chunking():
    model = ModelSpec(pendulum(gamma=0.1), modulated_noise(2.0, 1.5, 10.0))
    a = simulate_ensemble(EnsembleSpec(model, 0.3, 0.0, 1.0, 128, 300, seed=9, chunk=64))
    b = simulate_ensemble(EnsembleSpec(model, 0.3, 0.0, 1.0, 128, 300, seed=9, chunk=64, threads=3))
    c = simulate_ensemble(EnsembleSpec(model, 0.3, 0.0, 1.0, 128, 300, seed=9, chunk=300))
    assert np.array_equal(a.mean_x.values, b.mean_x.values)
    assert np.max(np.abs(a.mean_x.values - c.mean_x.values)) < 1e-13


def test_stored_paths_and_export(tmp_path):
    spec = EnsembleSpec(_free(), 0.5, 0.0, 0.0, 64, 20, seed=1, chunk=8, store_paths=10)
    res = simulate_ensemble(spec)
    assert res.paths_x.shape == (10, 65)
    rec = write_ensemble(res, tmp_path)
    assert json.loads((tmp_path / "summary.json").read_text())["seed"] == 1
    assert rec["n_used"] == 20
    res.write_paths_csv(tmp_path / "paths")
    assert len(list((tmp_path / "paths").glob("path_*.csv"))) == 10


def test_diverged_paths_are_counted():
    # f = y^3 blows up in finite time on some noise realizations only
    blow = Force(lambda t, x, y: y**3, lambda t, x, y: 0 * y, lambda t, x, y: 3 * y**2, name="blow")
    res = simulate_ensemble(EnsembleSpec(ModelSpec(blow, constant_noise(2.0)), 0.5, 0.0, 0.0, 64, 200))
    assert 0 < res.n_diverged < 200
    assert np.all(np.isfinite(res.mean_x.values))
    assert res.to_record()["n_used"] == 200 - res.n_diverged


def test_mean_velocity_converges():
    # linear drift: the mean solves the noiseless equation (Euler scheme is linear)
    model = ModelSpec(linear_force(-4.0), constant_noise(1.0))
    spec = EnsembleSpec(model, 0.7, 1.0, 0.0, 64, 4000, seed=2)
    res = simulate_ensemble(spec)
    X = np.empty(65)
    Y = np.empty(65)
    X[0], Y[0] = 1.0, 0.0
    dt = spec.grid.dt
    for i in range(64):
        X[i + 1] = X[i] + Y[i] * dt
        Y[i + 1] = Y[i] - 4.0 * X[i] * dt
    # sd of the final velocity is at most ~1.2, so 4000 paths give se ~ 0.02
    assert np.max(np.abs(res.mean_y.values - Y)) < 0.1


def test_pendulum_mean_near_noiseless_path():
    model = ModelSpec(pendulum(), modulated_noise(2.0, 1.5, 10.0))
    spec = EnsembleSpec(model, 0.3, -0.5, 1.0, 256, 2000, seed=0)
    res = simulate_ensemble(spec)
    ref = noiseless_shoot(model, -0.5, 1.0, spec.grid)
    assert np.max(np.abs(res.mean_x.values - ref.psi.values)) < 0.15


# --- tubes ------------------------------------------------------------------------

def test_wilson_interval_oracle():
    lo, hi = wilson_interval(5, 100)
    assert lo == pytest.approx(0.0215436791543679707, rel=1e-9)
    assert hi == pytest.approx(0.1117504692319191454, rel=1e-9)
    assert wilson_interval(0, 10)[0] == 0.0
    with pytest.raises(InvalidArgument):
        wilson_interval(0, 0)


@settings(max_examples=40)
@given(st.integers(1, 500), st.integers(0, 500))
def test_wilson_interval_contains_estimate(trials, hits):
    hits = min(hits, trials)
    lo, hi = wilson_interval(hits, trials)
    assert 0 <= lo <= hits / trials <= hi <= 1


def _center(spec):
    return noiseless_shoot(spec.model, spec.x0, spec.y0, spec.grid)


def test_tube_extremes():
    spec = EnsembleSpec(_free(), 0.5, 0.0, 0.0, 64, 50)
    c = _center(spec)
    assert tube_probability(spec, c, math.inf).p_hat == 1.0
    assert tube_probability(spec, c, 0.0).p_hat == 0.0
    with pytest.raises(InvalidArgument):
        tube_probability(spec, c, -1.0)
    with pytest.raises(InvalidArgument):
        tube_probability(spec, None, 1.0)


def test_position_and_noise_tubes_agree_without_drift():
    spec = EnsembleSpec(_free(1.5), 0.7, 0.0, 0.0, 64, 400, seed=3)
    c = _center(spec)
    a = tube_probability(spec, c, 1.5, beta=0.3, mode=POSITION)
    b = tube_probability(spec, None, 1.5, beta=0.3, mode=NOISE)
    assert a.hits == b.hits
    assert 0 < a.hits < 400
    assert a.wilson_ci[0] <= a.p_hat <= a.wilson_ci[1]


def test_tube_probability_increases_with_epsilon():
    spec = EnsembleSpec(ModelSpec(pendulum(), constant_noise(1.0)), 0.5, 0.0, 1.0, 64, 500, seed=5)
    c = _center(spec)
    ps = [tube_probability(spec, c, e, beta=0.2).hits for e in (0.8, 1.2, 1.8, 3.0)]
    assert ps == sorted(ps)


def test_tube_center_must_match():
    spec = EnsembleSpec(_free(), 0.5, 0.0, 0.0, 64, 10)
    g = spec.grid
    off = PathPair.from_velocity(GridFn(g, 1 + 0 * g.t), 0.0)
    with pytest.raises(InvalidArgument):
        tube_probability(spec, off, 1.0)


# --- ratio and small balls ---------------------------------------------------------

def test_ratio_of_identical_paths_is_zero():
    spec = EnsembleSpec(_free(), 0.5, 0.0, 0.0, 64, 1000, seed=1)
    c = _center(spec)
    res = om_ratio_experiment(spec, c, c, 2.0, beta=0.1)
    assert res.log_ratio_mc == 0.0 and res.delta_J == 0.0
    assert res.hits1 == res.hits2 > 0


def test_ratio_sign_and_inconclusive_flag():
    spec = EnsembleSpec(_free(), 0.5, 0.0, 0.0, 64, 4000, seed=2)
    g = spec.grid
    p1 = _center(spec)
    p2 = PathPair.from_velocity(GridFn(g, g.t.copy()), 0.0)
    res = om_ratio_experiment(spec, p1, p2, 1.5, beta=0.1)
    assert res.delta_J == pytest.approx(0.5, abs=1e-12)
    assert res.log_ratio_mc > 0
    assert res.hits1 > res.hits2
    tiny = om_ratio_experiment(spec, p1, p2, 0.2, beta=0.1)
    assert tiny.inconclusive and math.isnan(tiny.agreement)


def test_small_ball_slope_negative():
    spec = EnsembleSpec(_free(), 0.5, 0.0, 0.0, 128, 4000, seed=0)
    res = small_ball_diagnostic(spec, 0.2, [2.0, 1.6, 1.3, 1.1])
    assert res.slope_fit < 0
    assert len(res.points) == 4


def test_small_ball_without_noise_is_flat():
    model = ModelSpec(zero_force(), modulated_noise(0.0, 0.0, 1.0))
    res = small_ball_diagnostic(EnsembleSpec(model, 0.5, 0, 0, 64, 20), 0.2, [1.0, 0.5])
    assert res.slope_fit == pytest.approx(0.0, abs=1e-12)


def test_small_ball_validation():
    spec = EnsembleSpec(_free(), 0.5, 0.0, 0.0, 64, 50)
    with pytest.raises(InvalidArgument):
        small_ball_diagnostic(spec, 0.2, [1.0])
    with pytest.raises(InvalidArgument):
        small_ball_diagnostic(spec, 0.6, [1.0, 0.5])
    with pytest.raises(InvalidArgument):
        small_ball_diagnostic(spec, 0.2, [1e-3, 2e-3])


def test_zero_drift_mean_velocity_within_three_se():
    spec = EnsembleSpec(_free(), 0.3, 0.0, 0.5, 64, 10_000, seed=6)
    res = simulate_ensemble(spec)
    se = 1.0 / math.sqrt(spec.n_paths)  # sd of B^H_1 is 1
    assert abs(res.mean_y.values[-1] - 0.5) <= 3 * se


def test_mean_path_law_of_large_numbers():
    model = ModelSpec(pendulum(), modulated_noise(2.0, 1.5, 10.0))

    def mean(n_paths, seed):
        return simulate_ensemble(EnsembleSpec(model, 0.3, -0.5, 1.0, 128, n_paths, seed=seed)).mean_x.values

    ref = mean(100_000, 99)  # streams of seed 99 are independent of the replicas
    # a single L_inf draw is noisy; average over independent replicas
    small = np.mean([np.max(np.abs(mean(1_000, s) - ref)) for s in range(6)])
    large = np.mean([np.max(np.abs(mean(10_000, s) - ref)) for s in range(6)])
    assert large <= small / 2
