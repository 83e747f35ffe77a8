"""Monte Carlo simulation of stochastic Volterra equations.

Left-point Euler scheme

    X_{j+1} = g_0(t_{j+1}) + sum_{l <= j} W[j+1-l] b(X_l)
              + sum_{l <= j} kappa[j+1-l] sigma(X_l) xi_l,

with W the exact cell integrals of K, kappa the exact L2 cell norms and one
normal vector xi_l per step shared by all later times.  Paths are processed
in batches; finished time blocks are pushed to all later times with one
matrix product, so the cost is dominated by BLAS.
"""

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .kernels import lag_weights, square_lag_weights
from .model import (FreeSpace, JacobiInterval, PolyModel, UnitBall,
                    check_ball_drift_condition)
from .rng import normals

ABORT_EIGENVALUE = -1e-8
_RECORD_ALL_BYTES = 4e8


class DriftConditionError(ValueError):
    pass


@dataclass(eq=False)
class PathEnsemble:
    """Recorded states of simulated paths.

    ``states[p, n]`` is the state of path p at grid step ``steps[n]``.
    Aborted paths are kept but excluded from estimators.
    """

    grid: Grid
    d: int
    n_paths: int
    steps: np.ndarray
    states: np.ndarray
    aborted: np.ndarray
    scheme: str
    seed: int
    domain: object = None
    info: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.grid.times[self.steps]

    def at(self, t):
        """States at time t, shape (n_paths, d)."""
        j = self.grid.index(t)
        pos = np.flatnonzero(self.steps == j)
        if pos.size == 0:
            raise ValueError(f"time {t} was not recorded")
        return self.states[:, pos[0]]

    @property
    def n_aborted(self):
        return int(self.aborted.sum())


def _sigma_fn(model, space):
    d = model.d
    if isinstance(space, UnitBall):
        c = space.c

        def f(x, xi):
            s = c * np.sqrt(np.maximum(0.0, 1.0 - np.sum(x * x, axis=1)))
            return s[:, None] * xi, np.zeros(len(x))
        return f
    if isinstance(space, JacobiInterval):
        a1, a2, c = space.alpha1, space.alpha2, space.c

        def f(x, xi):
            y = x[:, 0]
            s = c * np.sqrt(np.maximum(0.0, (y - a1) * (a2 - y)))
            return s[:, None] * xi, np.zeros(len(x))
        return f
    if d == 1:
        A0, A1, A11 = model.A0[0, 0], model.A1[0, 0, 0], model.A2[0, 0, 0, 0]

        def f(x, xi):
            y = x[:, 0]
            a = A0 + (A1 + A11 * y) * y
            return np.sqrt(np.maximum(a, 0.0))[:, None] * xi, np.minimum(a, 0.0)
        return f

    def f(x, xi):
        s, neg = model.sigma(x)
        return np.einsum("pij,pj->pi", s, xi), neg
    return f


def _record_steps(grid, n_paths, d, record_times):
    if record_times is not None:
        steps = sorted({grid.index(t) for t in record_times})
        return np.array(steps, dtype=np.int64)
    if n_paths * (grid.M + 1) * d * 8 <= _RECORD_ALL_BYTES:
        return np.arange(grid.M + 1)
    return np.array(sorted({0, grid.M // 2, grid.M}), dtype=np.int64)


def _simulate(model, kernel, grid, n_paths, seed, space, scheme, record_times=None,
              batch=None, block=32):
    if not isinstance(grid, Grid):
        grid = Grid(*grid)
    d, M = model.d, grid.M
    W = lag_weights(kernel, grid.dt, M)
    kap = np.sqrt(np.maximum(square_lag_weights(kernel, grid.dt, M), 0.0))
    G = model.g0(grid.times)
    steps = _record_steps(grid, n_paths, d, record_times)
    rec_pos = {int(s): n for n, s in enumerate(steps)}
    states = np.empty((n_paths, len(steps), d))
    aborted = np.zeros(n_paths, dtype=bool)
    sig = _sigma_fn(model, space)
    constrained = not isinstance(space, FreeSpace)
    exc_max = np.zeros(M + 1)
    n_proj = np.zeros(M + 1, dtype=np.int64)
    clip_min = 0.0
    if batch is None:
        batch = max(1, min(n_paths, int(2e7 // ((M + 1) * d * 3))))
    lag = np.arange(M + 1)
    for p0 in range(0, n_paths, batch):
        rows = range(p0, min(n_paths, p0 + batch))
        nb = len(rows)
        D = nb * d
        xi = normals(seed, 0, rows, max(M, 1) * d).reshape(nb, max(M, 1), d)
        xi = np.ascontiguousarray(xi.transpose(1, 0, 2))
        acc = np.zeros((M + 1, nb, d))
        Hb = np.zeros((M + 1, nb, d))
        Hs = np.zeros((M + 1, nb, d))
        dead = np.zeros(nb, dtype=bool)
        for s in range(0, M + 1, block):
            e = min(M + 1, s + block)
            for j in range(s, e):
                x = G[j] + acc[j]
                for l in range(s, j):
                    x = x + W[j - l] * Hb[l] + kap[j - l] * Hs[l]
                if constrained:
                    x, exc, moved = space.project(x)
                    if exc.size:
                        exc_max[j] = max(exc_max[j], float(exc.max()))
                        n_proj[j] += int(moved.sum())
                if j in rec_pos:
                    states[p0:p0 + nb, rec_pos[j]] = x
                if j == M:
                    break
                Hb[j] = model.b0 + x @ model.B.T
                Hs[j], neg = sig(x, xi[j])
                if np.any(neg < ABORT_EIGENVALUE):
                    dead |= neg < ABORT_EIGENVALUE
                if neg.size:
                    clip_min = min(clip_min, float(neg.min()))
                if dead.any():
                    Hb[j][dead] = 0.0
                    Hs[j][dead] = 0.0
            if e <= M:
                fut = lag[e:, None] - lag[None, s:e]
                acc[e:].reshape(M + 1 - e, D)[:] += (
                    W[fut] @ Hb[s:e].reshape(e - s, D) + kap[fut] @ Hs[s:e].reshape(e - s, D))
        aborted[p0:p0 + nb] = dead
    info = {"excursion_max": exc_max, "projected": n_proj, "clip_min": clip_min,
            "n_aborted": int(aborted.sum())}
    return PathEnsemble(grid, d, n_paths, steps, states, aborted, scheme, int(seed),
                        None if isinstance(space, FreeSpace) else space, info)


def simulate_paths(model, kernel, grid, n_paths, seed=0, *, record_times=None, batch=None):
    """Simulate the model on its declared state space.

    Free-space models use the symmetric root of a(x); a path whose a(x) has
    an eigenvalue below -1e-8 is aborted and excluded from estimates.
    """
    return _simulate(model, kernel, grid, n_paths, seed, model.state_space,
                     model.state_space.name, record_times, batch)


def simulate_ball(model, kernel, grid, n_paths, seed=0, *, assume_kernel=False,
                  record_times=None, batch=None):
    """Unit-ball dynamics with sigma(x) = c sqrt(1 - |x|^2) I and radial projection."""
    space = model.state_space
    if not isinstance(space, UnitBall):
        raise ValueError("simulate_ball needs a model built with PolyModel.unit_ball")
    chk = check_ball_drift_condition(model.b0, model.B)
    if not chk.passed:
        raise DriftConditionError(
            f"x'(b0 + Bx) > 0 on the sphere, witness {chk.witness} (value {chk.value:.3g})")
    if not (kernel.completely_monotone or assume_kernel):
        raise ValueError("kernel is not known to be completely monotone; pass "
                         "assume_kernel=True to assert nonnegative non-increasing "
                         "kernel conditions")
    return _simulate(model, kernel, grid, n_paths, seed, space, "ball", record_times, batch)


def simulate_jacobi(alpha1, alpha2, lam, b, c, kernel, grid, n_paths, seed=0, *,
                    y0=None, record_times=None, batch=None):
    """Jacobi Volterra dynamics on [alpha1, alpha2] with clamping."""
    if not alpha1 < alpha2:
        raise ValueError("need alpha1 < alpha2")
    y0 = b if y0 is None else y0
    model = PolyModel.jacobi(alpha1, alpha2, lam, b, c, y0)
    return _simulate(model, kernel, grid, n_paths, seed, model.state_space, "jacobi",
                     record_times, batch)


def mc_moment(ensemble, t, alpha):
    """Sample mean of X_t^alpha over surviving paths and its standard error."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=int))
    if alpha.size != ensemble.d:
        raise ValueError(f"multi-index needs {ensemble.d} entries")
    if not alpha.any():
        return 1.0, 0.0
    x = ensemble.at(t)[~ensemble.aborted]
    v = np.prod(x ** alpha, axis=1)
    n = v.size
    mean = float(np.sum(v) / n)
    se = float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, se


def invariance_report(ensemble, domain=None):
    """Domain-violation statistics; empty for unconstrained ensembles."""
    domain = ensemble.domain if domain is None else domain
    if domain is None or isinstance(domain, FreeSpace):
        return {}
    exc = ensemble.info.get("excursion_max", np.zeros(1))
    proj = ensemble.info.get("projected", np.zeros(1))
    inside = domain.contains(ensemble.states, tol=0.0)
    live = ~ensemble.aborted
    total_steps = ensemble.n_paths * ensemble.grid.M
    return {
        "domain": domain.name,
        "excursion_max": float(exc.max()),
        "excursion_q95": float(np.quantile(exc, 0.95)),
        "projected_fraction": float(proj.sum() / max(total_steps, 1)),
        "stored_inside_fraction": float(inside[live].mean()) if live.any() else 1.0,
        "post_projection_violation": int((~inside[live]).sum()),
    }
