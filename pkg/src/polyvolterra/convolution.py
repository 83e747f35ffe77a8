"""Discrete convolution and resolvents on a uniform grid.

Densities are piecewise constant; whenever a kernel takes part in a
convolution it is integrated exactly over each cell (product integration),
which keeps the rule first-order accurate for singular kernels.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .kernels import Kernel, lag_weights


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values at t_j = j dt, j = 0..M; scalars or d x d matrices."""

    dt: float
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def M(self):
        return self.values.shape[0] - 1

    @property
    def T(self):
        return self.M * self.dt

    @property
    def times(self):
        return self.dt * np.arange(self.M + 1)

    @property
    def grid(self):
        return Grid(self.T, self.M)

    def at(self, t):
        """Value at t, interpolated linearly off the grid.

        Returns (value, on_grid).
        """
        x = t / self.dt
        j = int(np.floor(x + 1e-9))
        if abs(x - round(x)) <= 1e-9 * max(1.0, x):
            return self.values[int(round(x))], True
        if not 0 <= x <= self.M:
            raise ValueError(f"time {t} outside [0, {self.T}]")
        w = x - j
        warnings.warn(f"time {t} is off the grid; value interpolated", stacklevel=2)
        return (1 - w) * self.values[j] + w * self.values[j + 1], False


class GridMismatch(ValueError):
    pass


def _check(f, g):
    if f.M != g.M or not np.isclose(f.dt, g.dt, rtol=1e-12, atol=0):
        raise GridMismatch(f"grid mismatch: (M={f.M}, dt={f.dt}) vs (M={g.M}, dt={g.dt})")


def _matmul(a, b):
    if a.ndim == 1 or b.ndim == 1:
        return a * b if a.ndim == b.ndim else (
            a[..., None, None] * b if a.ndim == 1 else a * b[..., None, None])
    return a @ b


def _kernel_conv(kernel, g):
    M, dt = g.M, g.dt
    W = lag_weights(kernel, dt, M)
    vals = g.values
    out = np.zeros_like(vals)
    for j in range(1, M + 1):
        # sum_{l < j} W[j - l] g_l
        w = W[j:0:-1]
        out[j] = np.tensordot(w, vals[:j], axes=(0, 0))
    return GridFunction(dt, out)


def discrete_convolve(f, g):
    """(f * g)(t_j) with left-endpoint densities.

    When either factor is a kernel, the kernel is integrated exactly over
    each cell against the other factor's left-endpoint value.
    """
    if isinstance(f, Kernel) and isinstance(g, Kernel):
        raise TypeError("at least one factor must be a GridFunction")
    if isinstance(f, Kernel):
        return _kernel_conv(f, g)
    if isinstance(g, Kernel):
        return _kernel_conv(g, f)
    _check(f, g)
    M, dt = f.M, f.dt
    shape = _matmul(f.values[:1], g.values[:1]).shape[1:]
    out = np.zeros((M + 1,) + shape)
    for j in range(1, M + 1):
        lags = f.values[j:0:-1]
        out[j] = dt * np.sum(_matmul(lags, g.values[:j]), axis=0)
    return GridFunction(dt, out)


def _as_matrix(B):
    B = np.asarray(B, dtype=float)
    if B.ndim == 0:
        B = B.reshape(1, 1)
    return B


def solve_resolvent_RB(kernel, B, grid, cond_limit=1e8):
    """Solve K B * R = K B + R for R on the grid.

    R is piecewise constant with right-endpoint values, so R(t_j) enters its
    own cell and each step solves (I - W_1 B) R_j = sum_{l<j} W_{j-l+1} B R_l
    - K(t_j) B.  The value at 0 is the cell average -(W_1/dt) B, which stays
    finite for singular kernels.
    """
    B = _as_matrix(B)
    d = B.shape[0]
    M, dt = grid.M, grid.dt
    W = lag_weights(kernel, dt, M + 1)
    Kt = np.empty(M + 1)
    Kt[1:] = kernel(grid.times[1:])
    R = np.zeros((M + 1, d, d))
    if not np.any(B):
        return GridFunction(dt, R)
    lhs = np.eye(d) - W[1] * B
    cond = np.linalg.cond(lhs)
    if not np.isfinite(cond) or cond > cond_limit:
        raise np.linalg.LinAlgError(
            f"I - W1 B is ill-conditioned (cond={cond:.3g}); refine the grid")
    lu_inv = np.linalg.inv(lhs)
    R[0] = -(W[1] / dt) * B
    BR = np.zeros((M + 1, d, d))
    for j in range(1, M + 1):
        acc = np.tensordot(W[j:1:-1], BR[1:j], axes=(0, 0)) if j > 1 else 0.0
        R[j] = lu_inv @ (acc - Kt[j] * B)
        BR[j] = B @ R[j]
    return GridFunction(dt, R)


def compute_EB(kernel, R):
    """E_B = K - R_B * K with the solver's right-endpoint rule."""
    M, dt = R.M, R.dt
    d = R.values.shape[-1]
    W = lag_weights(kernel, dt, M + 1)
    E = np.zeros((M + 1, d, d))
    Kt = kernel(R.times[1:])
    for j in range(1, M + 1):
        E[j] = Kt[j - 1] * np.eye(d) - np.tensordot(W[j:0:-1], R.values[1:j + 1],
                                                      axes=(0, 0))
    if kernel.exponent < 0:
        E[0] = (W[1] / dt) * np.eye(d)
    else:
        E[0] = float(kernel(0.0)) * np.eye(d)
    return GridFunction(dt, E)


def verify_resolvent(kernel, B, R):
    """max_j |(K B * R)(t_j) - K(t_j) B - R(t_j)| over j >= 1."""
    B = _as_matrix(B)
    vals = np.asarray(R.values if isinstance(R, GridFunction) else R, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None, None]
    M, dt = vals.shape[0] - 1, R.dt
    W = lag_weights(kernel, dt, M + 1)
    Kt = kernel(dt * np.arange(1, M + 1))
    res = 0.0
    BR = np.einsum("ik,jkl->jil", B, vals)
    for j in range(1, M + 1):
        conv = np.tensordot(W[j:0:-1], BR[1:j + 1], axes=(0, 0))
        r = conv - Kt[j - 1] * B - vals[j]
        res = max(res, float(np.max(np.abs(r))))
    return res
