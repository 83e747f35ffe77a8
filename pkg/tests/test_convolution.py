import math

import numpy as np
import pytest
from scipy.linalg import expm

from polyvolterra.convolution import (GridFunction, GridMismatch, compute_EB,
                                      discrete_convolve, solve_resolvent_RB, verify_resolvent)
from polyvolterra.grid import Grid
from polyvolterra.kernels import Constant, Exponential, Fractional


def ones(M, dt, c=1.0):
    return GridFunction(dt, np.full(M + 1, c))


def test_constant_kernel_against_ones():
    M, dt = 50, 0.02
    out = discrete_convolve(Constant(1.0), ones(M, dt))
    assert np.allclose(out.values, dt * np.arange(M + 1), rtol=1e-13, atol=1e-15)


def test_exponential_against_ones():
    # exact kernel cells against a constant density: no discretization error
    M = 100
    out = discrete_convolve(Exponential(1.0), ones(M, 1.0 / M))
    assert out.values[-1] == pytest.approx(1 - math.exp(-1), rel=1e-12)


def test_fractional_half_is_constant_kernel():
    M, dt, c = 40, 0.025, 2.5
    out = discrete_convolve(Fractional(0.5), ones(M, dt, c))
    assert np.allclose(out.values, c * dt * np.arange(M + 1), rtol=1e-13)


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        discrete_convolve(ones(10, 0.1), ones(20, 0.05))


def test_two_grid_functions_first_order():
    M, dt = 400, 1.0 / 400
    t = dt * np.arange(M + 1)
    out = discrete_convolve(GridFunction(dt, t), ones(M, dt))
    # int_0^t s ds = t^2 / 2
    assert np.max(np.abs(out.values - t ** 2 / 2)) < 2 * dt


@pytest.mark.parametrize("kernel,closed", [
    (Constant(1.0), lambda t: -0.5 * np.exp(0.5 * t)),
    (Exponential(1.0), lambda t: -0.5 * np.exp(-0.5 * t)),
])
def test_resolvent_closed_forms(kernel, closed):
    errs = []
    for M in (500, 1000, 2000):
        R = solve_resolvent_RB(kernel, 0.5, Grid(1.0, M))
        errs.append(abs(R.values[-1].item() - closed(1.0)))
        assert errs[-1] < 2.0 / M
    assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8
    assert closed(1.0) == pytest.approx(-0.8243606 if isinstance(kernel, Constant)
                                        else -0.3032653, abs=1e-7)


@pytest.mark.parametrize("kernel,closed", [
    (Constant(1.0), lambda t: np.exp(0.5 * t)),
    (Exponential(1.0), lambda t: np.exp(-0.5 * t)),
])
def test_eb_closed_forms(kernel, closed):
    for M in (500, 2000):
        g = Grid(1.0, M)
        E = compute_EB(kernel, solve_resolvent_RB(kernel, 0.5, g))
        err = np.max(np.abs(E.values[1:].ravel() - closed(g.times[1:])))
        assert err < 2.0 / M


def test_zero_drift():
    g = Grid(1.0, 100)
    k = Fractional(0.3)
    R = solve_resolvent_RB(k, 0.0, g)
    assert np.all(R.values == 0)
    assert verify_resolvent(k, 0.0, R) == 0.0
    E = compute_EB(k, R)
    assert np.allclose(E.values[1:].ravel(), k(g.times[1:]), rtol=1e-14)


@pytest.mark.parametrize("kernel", [Fractional(0.3), Exponential(2.0), Constant(1.0)])
def test_residual_exact_and_perturbed(kernel):
    g = Grid(1.0, 200)
    B = np.array([[-0.4, 0.2], [0.1, -0.3]])
    R = solve_resolvent_RB(kernel, B, g)
    assert verify_resolvent(kernel, B, R) <= 1e-12
    v = np.array(R.values)
    v[57] += 0.1
    assert verify_resolvent(kernel, B, GridFunction(R.dt, v)) >= 0.05


def test_eb_matches_matrix_exponential():
    B = np.array([[-0.5, 0.3], [0.2, -0.1]])
    errs = []
    for M in (250, 500, 1000):
        g = Grid(1.0, M)
        E = compute_EB(Constant(1.0), solve_resolvent_RB(Constant(1.0), B, g))
        errs.append(max(np.max(np.abs(E.values[j] - expm(t * B)))
                        for j, t in enumerate(g.times) if j > 0))
    assert errs[-1] < 1.0 / 1000
    assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8


@pytest.mark.parametrize("kernel", [Exponential(1.0), Constant(1.0)])
def test_eb_refinement_factor(kernel):
    diffs = []
    prev = None
    for M in (100, 200, 400, 800):
        E = compute_EB(kernel, solve_resolvent_RB(kernel, 0.7, Grid(1.0, M)))
        coarse = E.values[::M // 100]
        if prev is not None:
            diffs.append(np.max(np.abs(coarse[1:] - prev[1:])))
        prev = coarse
    assert diffs[0] / diffs[1] >= 1.8 and diffs[1] / diffs[2] >= 1.8


@pytest.mark.parametrize("kernel", [Fractional(0.3), Exponential(1.5), Constant(2.0)])
def test_convolution_commutes_scalar(kernel):
    # K b * R = K b + R and E = K - R * K give E = -R / b exactly when R * K = K * R
    b = -0.6
    R = solve_resolvent_RB(kernel, b, Grid(1.0, 300))
    E = compute_EB(kernel, R)
    assert np.max(np.abs(E.values[1:] + R.values[1:] / b)) <= 1e-12


def test_gridfunction_off_grid_interpolates():
    f = GridFunction(0.1, np.arange(11.0))
    v, on = f.at(0.3)
    assert on and v == 3.0
    with pytest.warns(UserWarning, match="off the grid"):
        v, on = f.at(0.35)
    assert not on and v == pytest.approx(3.5)
