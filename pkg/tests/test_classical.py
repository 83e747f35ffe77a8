import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from polyvolterra.model import PolyModel
from polyvolterra.moments import classical_moments_ode, generator_matrix


def test_black_scholes_closed_form():
    m = PolyModel.scalar(b1=0.1, A11=0.04, x0=1.0)
    ode = classical_moments_ode(m, m.x0, 4, 1.0)
    for k in range(5):
        assert ode[(k,)] == pytest.approx(math.exp(0.1 * k + 0.02 * k * (k - 1)), rel=1e-10)


def test_zero_model_is_constant():
    m = PolyModel.from_coefficients(x0=[0.4, 1.5])
    ode = classical_moments_ode(m, m.x0, 3, 2.0)
    for alpha, v in ode.items():
        assert v == np.prod(np.array([0.4, 1.5]) ** np.array(alpha))


def test_jacobi_first_moment_and_ou_second():
    lam, b, x0 = 1.3, 0.4, 0.9
    m = PolyModel.jacobi(0.0, 1.0, lam, b, 0.8, x0)
    ode = classical_moments_ode(m, m.x0, 1, 0.7)
    assert ode[(1,)] == pytest.approx(b + (x0 - b) * math.exp(-lam * 0.7), rel=1e-10)
    # Ornstein-Uhlenbeck: Var = s2 (1 - e^{-2 lam t}) / (2 lam)
    ou = PolyModel.scalar(b0=lam * b, b1=-lam, A0=0.09, x0=x0)
    ode = classical_moments_ode(ou, ou.x0, 2, 0.7)
    mean = b + (x0 - b) * math.exp(-lam * 0.7)
    var = 0.09 * (1 - math.exp(-2 * lam * 0.7)) / (2 * lam)
    assert ode[(2,)] == pytest.approx(mean ** 2 + var, rel=1e-10)


def test_generator_against_expm_and_solve_ivp():
    m = PolyModel.from_coefficients(b0=[0.05, 0.1], B=[[-0.2, 0.1], [0.1, -0.3]],
                                    A0=np.diag([0.02, 0.03]),
                                    A2=np.full((2, 2, 2, 2), 0.01), x0=[0.5, 0.4])
    L, alphas = generator_matrix(m, 3)
    m0 = np.array([np.prod(m.x0 ** np.array(a)) for a in alphas])
    ref = expm(1.5 * L) @ m0
    ivp = solve_ivp(lambda t, y: L @ y, (0, 1.5), m0, rtol=1e-12, atol=1e-14).y[:, -1]
    assert np.allclose(ref, ivp, rtol=1e-9)
    ode = classical_moments_ode(m, m.x0, 3, 1.5)
    assert np.allclose([ode[a] for a in alphas], ref, rtol=1e-10)
    # polynomial degree is preserved, so the generator is block lower triangular
    deg = np.array([sum(a) for a in alphas])
    assert np.all(L[deg[:, None] < deg[None, :]] == 0)
