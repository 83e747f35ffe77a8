import math

import numpy as np
import pytest

from polyvolterra.grid import Grid
from polyvolterra.kernels import Constant, Fractional
from polyvolterra.model import PolyModel
from polyvolterra.moments import solve_moments
from polyvolterra.simulation import (DriftConditionError, invariance_report, mc_moment,
                                     simulate_ball, simulate_jacobi, simulate_paths)


def test_trivial_model_paths_are_constant():
    m = PolyModel.from_coefficients(x0=[0.3, -0.2])
    ens = simulate_paths(m, Fractional(0.3), Grid(1.0, 20), 50, seed=1)
    assert np.all(ens.states == np.array([0.3, -0.2]))
    assert ens.n_aborted == 0


def test_black_scholes_means():
    m = PolyModel.scalar(b1=0.1, A11=0.04, x0=1.0)
    ens = simulate_paths(m, Constant(1.0), Grid(1.0, 100), 20000, seed=3)
    bias = 0.01
    for k, ref in ((1, math.exp(0.1)), (2, math.exp(0.24))):
        mean, se = mc_moment(ens, 1.0, (k,))
        assert abs(mean - ref) < 4 * se + bias * ref


def test_fractional_affine_against_stepping():
    m = PolyModel.scalar(b0=0.3, b1=-0.5, A0=0.04, A1=0.1, x0=0.5)
    g = Grid(1.0, 50)
    ens = simulate_paths(m, Fractional(0.3), g, 20000, seed=2)
    tab = solve_moments(m, Fractional(0.3), 3, g)
    for t in (0.5, 1.0):
        for k in (1, 2, 3):
            mean, se = mc_moment(ens, t, (k,))
            assert abs(mean - tab.moment(t, k)) < 3 * se + 5e-3


def test_seed_determinism_and_batching():
    m = PolyModel.scalar(b0=0.3, b1=-0.5, A0=0.04, A1=0.1, x0=0.5)
    g = Grid(1.0, 30)
    a = simulate_paths(m, Fractional(0.3), g, 40, seed=9)
    b = simulate_paths(m, Fractional(0.3), g, 40, seed=9, batch=7)
    c = simulate_paths(m, Fractional(0.3), g, 40, seed=10)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_mc_moment_edge_cases():
    m = PolyModel.scalar(A0=0.04, x0=1.0)
    ens = simulate_paths(m, Constant(1.0), Grid(1.0, 10), 100, seed=0)
    assert mc_moment(ens, 1.0, (0,)) == (1.0, 0.0)
    with pytest.raises(ValueError):
        mc_moment(ens, 1.0, (1, 0))
    assert invariance_report(ens) == {}


def ball():
    return PolyModel.unit_ball([0.0, 0.0], -np.eye(2), 0.8, [0.6, 0.5])


def test_ball_stays_inside():
    ens = simulate_ball(ball(), Fractional(0.3), Grid(1.0, 100), 2000, seed=4)
    rep = invariance_report(ens)
    assert rep["domain"] == "ball"
    assert rep["stored_inside_fraction"] == 1.0
    assert rep["post_projection_violation"] == 0
    assert np.all(np.linalg.norm(ens.states, axis=2) <= 1.0)


def test_ball_without_noise_matches_first_moment():
    m = PolyModel.unit_ball([0.1, 0.0], [[-1.0, 0.2], [0.0, -0.5]], 0.0, [0.3, 0.4])
    g = Grid(1.0, 40)
    ens = simulate_ball(m, Fractional(0.3), g, 3, seed=0, record_times=g.times)
    tab = solve_moments(m, Fractional(0.3), 1, g)
    for i, alpha in enumerate([(1, 0), (0, 1)]):
        assert np.allclose(ens.states[:, :, i], tab.series(alpha), rtol=1e-12, atol=1e-14)


def test_ball_refusals():
    with pytest.raises(DriftConditionError):
        simulate_ball(PolyModel.unit_ball([2.0, 0.0], np.zeros((2, 2)), 0.5, [0.0, 0.0]),
                      Fractional(0.3), Grid(1.0, 10), 10)
    with pytest.raises(ValueError, match="completely monotone"):
        simulate_ball(ball(), Fractional(0.7), Grid(1.0, 10), 10)
    with pytest.raises(ValueError, match="unit_ball"):
        simulate_ball(PolyModel.scalar(x0=0.0), Fractional(0.3), Grid(1.0, 10), 10)


def test_ball_d1_is_jacobi_pathwise():
    a1, a2, lam, b, c, y0 = -0.5, 2.0, 1.3, 0.4, 0.7, 1.1
    s, mid = (a2 - a1) / 2, (a1 + a2) / 2
    g = Grid(1.0, 50)
    k = Fractional(0.4)
    ball1 = PolyModel.unit_ball([lam * (b - mid) / s], [[-lam]], c, [(y0 - mid) / s])
    xb = simulate_ball(ball1, k, g, 200, seed=5, record_times=g.times)
    xj = simulate_jacobi(a1, a2, lam, b, c, k, g, 200, seed=5, y0=y0, record_times=g.times)
    assert np.allclose(s * xb.states + mid, xj.states, rtol=1e-12, atol=1e-12)
    assert np.all((xj.states >= a1) & (xj.states <= a2))


def test_jacobi_without_noise():
    lam, b, y0 = 1.5, 0.3, 0.9
    g = Grid(1.0, 1000)
    ens = simulate_jacobi(0.0, 1.0, lam, b, 0.0, Constant(1.0), g, 2, seed=0, y0=y0,
                          record_times=g.times)
    exact = b + (y0 - b) * np.exp(-lam * g.times)
    assert np.max(np.abs(ens.states[0, :, 0] - exact)) < 1e-3
