import numpy as np
import pytest

from polyvolterra.grid import Grid
from polyvolterra.kernels import Constant, Fractional
from polyvolterra.model import PolyModel
from polyvolterra.moments import PicardDivergence, solve_moments, solve_moments_picard


def test_zero_model_converges_immediately():
    m = PolyModel.from_coefficients(x0=[0.7])
    tab = solve_moments_picard(m, Fractional(0.3), 3, Grid(1.0, 16))
    assert tab.info["iterations"] == 1
    for k in range(4):
        assert np.allclose(tab.series(k), 0.7 ** k, rtol=1e-14)


@pytest.mark.parametrize("model,kernel,N", [
    (PolyModel.scalar(b1=0.1, A11=0.04, x0=1.0), Constant(1.0), 3),
    (PolyModel.scalar(b0=0.3, b1=-0.5, A0=0.04, A1=0.1, x0=0.5), Fractional(0.3), 2),
])
def test_agrees_with_stepping(model, kernel, N):
    g = Grid(1.0, 32)
    pic = solve_moments_picard(model, kernel, N, g)
    step = solve_moments(model, kernel, N, g)
    for k in range(1, N + 1):
        assert np.max(np.abs(pic.series(k) - step.series(k))) < 5e-3 * abs(step.moment(1.0, k))
    assert 0 <= pic.info["contraction"] < 0.5


def test_no_convergence_raises():
    m = PolyModel.scalar(b1=0.5, A11=0.2, x0=1.0)
    with pytest.raises(PicardDivergence, match="no convergence"):
        solve_moments_picard(m, Constant(1.0), 2, Grid(1.0, 8), max_iter=2)


def test_memory_bound():
    from polyvolterra.moments import MemoryBoundExceeded
    with pytest.raises(MemoryBoundExceeded, match="reduce M"):
        solve_moments_picard(PolyModel.scalar(x0=1.0), Constant(1.0), 3, Grid(1.0, 200),
                             memory_limit=1e8)
