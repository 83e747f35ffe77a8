import math

import numpy as np
import pytest

from polyvolterra.grid import Grid
from polyvolterra.kernels import Constant, Exponential, Fractional
from polyvolterra.model import PolyModel
from polyvolterra.moments import (affine_moments_recursive, first_moment_voc,
                                  second_moment_voc, solve_moments, voc_moments)


def test_first_moment_black_scholes():
    m = PolyModel.scalar(b1=0.1, A11=0.04, x0=1.0)
    errs = []
    for M in (500, 1000, 2000):
        v = first_moment_voc(m, Constant(1.0), Grid(1.0, M)).values[-1].item()
        errs.append(abs(v - math.exp(0.1)))
    assert errs[-1] < 1e-3
    assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8


def test_first_moment_without_drift_is_g0():
    m = PolyModel.scalar(A0=0.1, A1=0.2, x0=0.6)
    g = Grid(1.0, 50)
    v = first_moment_voc(m, Fractional(0.3), g).values.ravel()
    assert np.allclose(v, 0.6, rtol=1e-14)


def test_first_moment_exponential_kernel_against_stepping():
    m = PolyModel.scalar(b0=0.1, b1=0.2, A0=0.05, A1=0.08, A11=0.06, x0=0.7)
    g = Grid(1.0, 400)
    v = first_moment_voc(m, Exponential(1.0), g).values.ravel()
    step = solve_moments(m, Exponential(1.0), 1, g).series(1)
    assert np.max(np.abs(v - step)) < 5e-3


def test_second_moment_ito_example():
    # dX = 0.2 dW: E[X_1^2] = 1 + 0.04
    m = PolyModel.scalar(A0=0.04, x0=1.0)
    S = second_moment_voc(m, Constant(1.0), Grid(1.0, 200)).values
    assert S[-1, 0, 0] == pytest.approx(1.04, rel=1e-12)


def test_second_moment_black_scholes():
    m = PolyModel.scalar(b1=0.1, A11=0.04, x0=1.0)
    tab = voc_moments(m, Constant(1.0), Grid(1.0, 2000))
    assert tab.moment(1.0, 2) == pytest.approx(math.exp(0.24), rel=1e-2)


def test_second_moment_without_diffusion_is_square():
    m = PolyModel.from_coefficients(b0=[0.2, 0.0], B=[[-0.4, 0.1], [0.3, -0.2]], x0=[1.0, 0.5])
    g = Grid(1.0, 100)
    g1 = first_moment_voc(m, Fractional(0.4), g).values.reshape(-1, 2)
    S = second_moment_voc(m, Fractional(0.4), g).values
    assert np.allclose(S, np.einsum("ja,jb->jab", g1, g1), rtol=1e-13, atol=1e-15)


def test_gaussian_fourth_moment():
    s2 = 0.09
    m = PolyModel.scalar(A0=s2, x0=0.0)
    tab = affine_moments_recursive(m, Constant(1.0), 4, Grid(1.0, 2000))
    for t in (0.5, 1.0):
        assert tab.moment(t, 2) == pytest.approx(s2 * t, rel=1e-2)
        assert tab.moment(t, 4) == pytest.approx(3 * s2 ** 2 * t ** 2, rel=1e-2)
        assert abs(tab.moment(t, 3)) < 1e-12


def test_affine_recursion_against_stepping_first_order():
    m = PolyModel.scalar(b0=0.3, b1=-0.5, A0=0.04, A1=0.1, x0=0.5)
    k = Fractional(0.3)
    diffs = []
    for M in (50, 100, 200):
        g = Grid(1.0, M)
        a = affine_moments_recursive(m, k, 3, g)
        s = solve_moments(m, k, 3, g)
        diffs.append(max(abs(a.moment(1.0, j) - s.moment(1.0, j)) for j in range(1, 4)))
    assert diffs[-1] < 5e-3
    assert diffs[0] / diffs[1] > 1.5 and diffs[1] / diffs[2] > 1.5


def test_affine_recursion_refuses_quadratic():
    with pytest.raises(ValueError, match="A_jk = 0"):
        affine_moments_recursive(PolyModel.scalar(b1=0.1, A11=0.04), Constant(1.0), 2,
                                 Grid(1.0, 10))
