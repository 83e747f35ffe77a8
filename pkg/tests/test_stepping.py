import itertools
import math

import numpy as np
import pytest

from polyvolterra.grid import Grid
from polyvolterra.kernels import Constant, Exponential, Fractional
from polyvolterra.model import PolyModel, multi_index_of_word
from polyvolterra.moments import (MemoryBoundExceeded, MomentBlowup, classical_moments_ode,
                                  moments_at_diagonal, reconstruct_moments,
                                  solve_all_coefficients, solve_coefficients, solve_moments)


def bs():
    return PolyModel.scalar(b1=0.1, A11=0.04, x0=1.0)


def test_black_scholes_closed_form():
    tab = solve_moments(bs(), Constant(1.0), 2, Grid(1.0, 2000), query_times=[1.0])
    assert tab.info["collapsed"]
    assert tab.moment(1.0, 1) == pytest.approx(math.exp(0.1), rel=1e-3)
    assert tab.moment(1.0, 2) == pytest.approx(math.exp(0.24), rel=1e-3)


def test_collapsed_matches_full_storage():
    g = Grid(1.0, 40)
    a = solve_moments(bs(), Constant(1.0), 3, g)
    b = solve_moments(bs(), Constant(1.0), 3, g, collapse=False)
    assert not b.info["collapsed"]
    assert np.allclose(a.diag, b.diag, rtol=1e-12, atol=0)


def test_zero_model_keeps_initial_products():
    x0 = np.array([0.7, 1.3])
    m = PolyModel.from_coefficients(x0=x0)
    g = Grid(1.0, 12)
    tab = solve_moments(m, Fractional(0.3), 3, g, snapshots=[0, 5, 12])
    for alpha in tab.alphas:
        assert np.allclose(tab.series(alpha), np.prod(x0 ** np.array(alpha)), rtol=1e-14)
    rng = np.random.default_rng(0)
    for j in (0, 5, 12):
        for _ in range(20):
            p = rng.integers(1, 4)
            slots = rng.integers(j, g.M + 1, p)
            letters = rng.integers(0, 2, p)
            v = tab.slice_value(j, list(zip(slots, letters)))
            assert v == pytest.approx(np.prod(x0[letters]), rel=1e-14)


def test_deterministic_curve_diagonal():
    # a = b = 0: X_t = g0(t)
    times = np.array([0.0, 0.5, 1.0])
    vals = np.array([[1.0], [2.0], [0.5]])
    m = PolyModel.from_coefficients(x0=[1.0]).replace(g0_times=times, g0_values=vals)
    g = Grid(1.0, 10)
    tab = solve_moments(m, Exponential(1.0), 3, g)
    G = m.g0(g.times)[:, 0]
    for k in range(4):
        assert np.allclose(tab.series(k), G ** k, rtol=1e-14)


def test_level_zero_is_one():
    tab = solve_moments(PolyModel.scalar(b0=0.1, b1=-0.3, A0=0.02, A1=0.1, x0=0.5),
                        Fractional(0.3), 3, Grid(1.0, 30))
    assert np.all(tab.series(0) == 1.0)
    assert moments_at_diagonal(tab, 0.5, 0) == 1.0


def _product_defect(M, tuples):
    # with a = 0 the process is deterministic, so level-p values factor into
    # level-1 values up to the O(dt) cross terms of the scheme
    m = PolyModel.from_coefficients(b0=[0.2, -0.1], B=[[-0.3, 0.1], [0.2, -0.4]],
                                    x0=[0.8, 1.1])
    r = M // 8
    tab = solve_moments(m, Fractional(0.35), 3, Grid(1.0, M), snapshots=[2 * r, 5 * r])
    worst = 0.0
    for j, items in tuples:
        items = [(s * r, i) for s, i in items]
        v = tab.slice_value(j * r, items)
        prod = np.prod([tab.slice_value(j * r, [it]) for it in items])
        worst = max(worst, abs(v - prod))
        perm = items[::-1]
        assert tab.slice_value(j * r, perm) == v
    return worst


def test_symmetric_storage_against_product_structure():
    rng = np.random.default_rng(1)
    tuples = []
    for _ in range(100):
        j = int(rng.choice([2, 5]))
        p = int(rng.integers(2, 4))
        tuples.append((j, list(zip(rng.integers(j, 9, p), rng.integers(0, 2, p)))))
    coarse, fine = _product_defect(16, tuples), _product_defect(64, tuples)
    assert coarse < 0.02
    assert coarse / fine > 3.5


def test_diagonal_word_invariance():
    m = PolyModel.from_coefficients(b0=[0.1, 0.0], B=[[-0.2, 0.1], [0.05, -0.1]],
                                    A0=np.diag([0.03, 0.02]),
                                    A2=np.full((2, 2, 2, 2), 0.005), x0=[0.6, 0.9])
    g = Grid(1.0, 10)
    tab = solve_moments(m, Exponential(1.0), 3, g, snapshots=[3, 7])
    for j in (3, 7):
        for p in range(1, 4):
            for w in itertools.product(range(2), repeat=p):
                v = tab.slice_value(j, [(j, i) for i in w])
                alpha = multi_index_of_word([i + 1 for i in w], 2)
                assert v == pytest.approx(tab.diag[j, tab.alpha_index(alpha)], rel=1e-12,
                                          abs=0)


def test_query_time_checks():
    tab = solve_moments(bs(), Constant(1.0), 2, Grid(1.0, 10), query_times=[0.5, 1.0])
    with pytest.raises(ValueError, match="not requested"):
        tab.moment(0.3, 1)
    with pytest.raises(ValueError, match="not a point"):
        solve_moments(bs(), Constant(1.0), 2, Grid(1.0, 10), query_times=[0.55])
    with pytest.raises(ValueError, match="exceeds"):
        tab.moment(1.0, 3)


def test_memory_bound_error():
    with pytest.raises(MemoryBoundExceeded, match="reduce M"):
        solve_moments(bs(), Fractional(0.3), 3, Grid(1.0, 400), memory_limit=1e6)


def test_blowup_reports_time():
    m = PolyModel.scalar(b1=60.0, A11=60.0, x0=1.0)
    with pytest.raises(MomentBlowup) as info:
        solve_moments(m, Constant(1.0), 4, Grid(10.0, 2000))
    assert 0 < info.value.last_valid_time < 10.0


def test_classical_reduction_d2():
    m = PolyModel.from_coefficients(b0=[0.05, 0.0], B=[[-0.2, 0.1], [0.1, -0.3]],
                                    A0=np.diag([0.02, 0.03]),
                                    A1=np.array([np.diag([0.02, 0.0]), np.diag([0.0, 0.02])]),
                                    A2=np.full((2, 2, 2, 2), 0.002), x0=[0.5, 0.4])
    tab = solve_moments(m, Constant(1.0), 3, Grid(1.0, 2000))
    ode = classical_moments_ode(m, m.x0, 3, 1.0)
    for alpha in tab.alphas:
        assert tab.moment(1.0, alpha) == pytest.approx(ode[alpha], rel=1e-3, abs=1e-6)


def test_jacobi_constant_kernel_against_ode():
    m = PolyModel.jacobi(0.0, 1.0, 1.0, 0.5, 1.0, 0.2)
    tab = solve_moments(m, Constant(1.0), 2, Grid(1.0, 2000))
    for t in (0.5, 1.0):
        ode = classical_moments_ode(m, m.x0, 2, t)
        assert abs(tab.moment(t, 1) - ode[(1,)]) < 1e-3
        assert abs(tab.moment(t, 2) - ode[(2,)]) < 1e-3


# coefficient system --------------------------------------------------------

def test_coefficient_initial_indicator():
    m = PolyModel.from_coefficients(b0=[0.1, 0.0], B=[[-0.2, 0.1], [0.05, -0.1]],
                                    A0=np.diag([0.03, 0.02]), x0=[1.0, 1.0])
    g = Grid(1.0, 8)
    for beta in [(0, 0), (1, 0), (1, 1), (0, 2)]:
        ct = solve_coefficients(m, Exponential(1.0), 2, beta, g)
        for alpha in ct.table.alphas:
            assert ct.c(0.0, alpha) == (1.0 if alpha == beta else 0.0)


def test_homogeneous_coefficients_are_monomial():
    m = PolyModel.scalar(b1=0.3, A11=0.1)
    coeffs = solve_all_coefficients(m, Exponential(2.0), 3, Grid(1.0, 20))
    for beta, ct in coeffs.items():
        for k in range(4):
            series = ct.series(k)
            if beta != (k,):
                assert np.all(series == 0.0)


@pytest.mark.parametrize("model,kernel", [
    (PolyModel.scalar(b0=0.1, b1=0.2, A0=0.05, A1=0.08, A11=0.06), Exponential(1.0)),
    (PolyModel.scalar(b0=0.3, b1=-0.5, A0=0.04, A1=0.1), Fractional(0.3)),
])
def test_reconstruction_identity(model, kernel):
    g = Grid(1.0, 24)
    coeffs = solve_all_coefficients(model, kernel, 3, g)
    for x0 in (0.3, 0.7, 1.2):
        tab = solve_moments(model.replace(x0=[x0]), kernel, 3, g)
        for t in (0.5, 1.0):
            for k in range(4):
                assert reconstruct_moments(coeffs, [x0], t, (k,)) == pytest.approx(
                    tab.moment(t, k), rel=1e-8, abs=1e-12)
