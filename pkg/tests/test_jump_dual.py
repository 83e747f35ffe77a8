import math

import numpy as np
import pytest
from scipy import stats

from polyvolterra.grid import Grid
from polyvolterra.jump_dual import (IneligibleKernel, channels_from_model, jump_dual_moment_1d,
                                    jump_dual_moment_inhom, jump_dual_moment_multi,
                                    kappa_integral, simulate_dual, simulate_jump_dual_1d,
                                    simulate_jump_dual_inhom)
from polyvolterra.kernels import Constant, Exponential, Fractional
from polyvolterra.model import PolyModel
from polyvolterra.moments import classical_moments_ode, solve_moments


def step_moment(model, kernel, alpha, T=1.0, M=100):
    # Richardson extrapolation of the first-order step method on M and 2M
    N = int(np.sum(alpha))
    coarse, fine = (solve_moments(model, kernel, N, Grid(T, m)).moment(T, alpha)
                    for m in (M, 2 * M))
    return 2 * fine - coarse


def test_kappa_integral_examples():
    assert kappa_integral(Constant(1.0), 0.3, 0.5) == pytest.approx(0.5)
    assert kappa_integral(Exponential(1.0), 0.0, 1.0) == pytest.approx(0.6321206, abs=1e-7)
    assert kappa_integral(Exponential(1.0), 0.4, 0.0) == 0.0
    with pytest.raises(IneligibleKernel):
        kappa_integral(Fractional(0.3), 0.0, 1.0, T=1.0)


def test_constant_kernel_is_exact():
    est, se = jump_dual_moment_1d(0.1, 0.04, Constant(1.0), 2, 1.0, n_samples=2000, seed=3)
    assert est == pytest.approx(math.exp(0.24), rel=1e-12)
    assert se < 1e-12
    est, _ = jump_dual_moment_1d(0.1, 0.04, Constant(1.0), 3, 1.0, x0=1.3, n_samples=100)
    assert est == pytest.approx(1.3 ** 3 * math.exp(0.3 + 0.12), rel=1e-12)


def test_no_channels_gives_one():
    s = simulate_jump_dual_1d(0.0, 0.0, Exponential(1.0), 3, 1.0, 100)
    assert np.all(s.exponent == 0) and np.all(s.n_events == 0)
    assert jump_dual_moment_1d(0.3, 0.1, Exponential(1.0), 0, 1.0) == (1.0, 0.0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_exponential_kernel_against_stepping(k):
    est, se = jump_dual_moment_1d(0.3, 0.1, Exponential(2.0), k, 1.0, n_samples=100_000,
                                  seed=k)
    ref = step_moment(PolyModel.scalar(b1=0.3, A11=0.1, x0=1.0), Exponential(2.0), (k,))
    assert abs(est - ref) < 3 * se + 1e-4 * ref


def test_monomial_scaling_in_x0():
    a = jump_dual_moment_1d(0.3, 0.1, Exponential(2.0), 3, 1.0, x0=1.0, n_samples=5000, seed=8)
    b = jump_dual_moment_1d(0.3, 0.1, Exponential(2.0), 3, 1.0, x0=0.7, n_samples=5000, seed=8)
    assert b[0] == pytest.approx(0.7 ** 3 * a[0], rel=1e-13)


def test_thinning_rate():
    # constant kernel, k = 3: events at rate 3 b1 + 3 A11 regardless of ages
    s = simulate_jump_dual_1d(0.3, 0.1, Constant(1.0), 3, 1.0, 100_000, seed=1)
    assert s.n_events.sum() >= 100_000
    assert s.n_events.mean() == pytest.approx(1.2, rel=0.02)


def test_refuses_negative_coefficients():
    with pytest.raises(ValueError, match="nonnegative"):
        simulate_jump_dual_1d(-0.1, 0.04, Constant(1.0), 2, 1.0)
    with pytest.raises(ValueError, match="signed mode"):
        simulate_dual(channels_from_model(PolyModel.scalar(b1=-0.1)), Constant(1.0), [2],
                      1.0, 10)


def test_signed_mode_against_stepping():
    m = PolyModel.scalar(b1=-0.3, A11=0.1, x0=1.0)
    est, se = jump_dual_moment_1d(-0.3, 0.1, Exponential(2.0), 2, 1.0, n_samples=100_000,
                                  seed=4, signed=True)
    ref = step_moment(m, Exponential(2.0), (2,))
    assert abs(est - ref) < 3 * se + 1e-3


def test_inhomogeneous_without_cemetery_is_homogeneous():
    s = simulate_jump_dual_inhom(0.0, 0.3, 0.0, 0.0, 0.1, Exponential(2.0), 3, 1.0, 1000,
                                 seed=2)
    assert np.all(s.survivors == 3)
    h = simulate_jump_dual_1d(0.3, 0.1, Exponential(2.0), 3, 1.0, 1000, seed=2)
    assert np.allclose(s.exponent, h.exponent)


def test_inhomogeneous_drift_only():
    x0, b0 = 0.8, 0.25
    est, se = jump_dual_moment_inhom(b0, 0.0, 0.0, 0.0, 0.0, Constant(1.0), 1, 1.0, x0=x0,
                                     n_samples=100_000, seed=5)
    assert abs(est - (x0 + b0)) < 3 * se


def test_inhomogeneous_against_stepping():
    m = PolyModel.scalar(b0=0.1, b1=0.2, A0=0.05, A1=0.08, A11=0.06, x0=0.7)
    est, se = jump_dual_moment_inhom(0.1, 0.2, 0.05, 0.08, 0.06, Exponential(1.0), 2, 1.0,
                                     x0=0.7, n_samples=100_000, seed=6)
    ref = step_moment(m, Exponential(1.0), (2,))
    assert abs(est - ref) < 3 * se + 1e-4 * ref


def gbm_pair():
    A2 = np.zeros((2, 2, 2, 2))
    A2[0, 0, 0, 0] = 0.04
    A2[1, 1, 1, 1] = 0.04
    return PolyModel.from_coefficients(B=np.diag([0.1, 0.0]), A2=A2, x0=[1.0, 1.0])


def test_multivariate_constant_kernel():
    # the first coordinate is geometric Brownian motion with drift 0.1 and
    # volatility 0.2, so E[X_1^2] = exp(2 * 0.1 + 0.04)
    m = gbm_pair()
    ode = classical_moments_ode(m, m.x0, 2, 1.0)
    assert ode[(2, 0)] == pytest.approx(math.exp(0.24), rel=1e-10)
    est, se = jump_dual_moment_multi(m, Constant(1.0), [2, 0], 1.0, n_samples=1000, seed=1)
    assert est == pytest.approx(math.exp(0.24), rel=1e-12)
    assert jump_dual_moment_multi(m, Constant(1.0), [0, 0], 1.0) == (1.0, 0.0)


def test_multivariate_exponential_against_stepping():
    A2 = np.full((2, 2, 2, 2), 0.01)
    m = PolyModel.from_coefficients(b0=[0.05, 0.02], B=[[0.2, 0.1], [0.05, 0.1]],
                                    A0=np.diag([0.02, 0.03]), A2=A2, x0=[0.9, 1.1])
    est, se = jump_dual_moment_multi(m, Exponential(1.5), [1, 1], 1.0, n_samples=100_000,
                                     seed=7)
    ref = step_moment(m, Exponential(1.5), (1, 1))
    assert abs(est - ref) < 3 * se + 1e-4 * ref


def test_survivor_letters_exchangeable():
    s = simulate_jump_dual_inhom(0.2, 0.3, 0.1, 0.1, 0.1, Exponential(1.0), 3, 1.0, 20000,
                                 seed=9)
    dead = (~s.alive).sum(axis=0)
    assert dead.sum() > 0
    assert stats.chisquare(dead).pvalue > 0.01


def test_ineligible_kernel_refused():
    with pytest.raises(IneligibleKernel, match="jump dual"):
        simulate_jump_dual_1d(0.3, 0.1, Fractional(0.3), 2, 1.0, 10)
