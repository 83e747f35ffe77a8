"""Picard fixed-point oracle for the lifted moment system.

Every level is stored as a dense tensor over (letters, t, T_1..T_p) on the
grid and the whole system is iterated as f <- f_0 + Psi f until successive
iterates agree.  Integrands are interpolated linearly in r and integrated
against the kernel factors exactly (product trapezoid rule), so this scheme
shares no discretization with the stepping solver.  Only small grids fit.
"""

import numpy as np

from ..grid import Grid
from ..kernels import _quad_alg, lag_weights, pair_lag_table
from ..model import multi_indices
from .stepping import MemoryBoundExceeded, MomentTable

_WORD = "ABCDEFG"
_MAT = "uvwxyz"


class PicardDivergence(RuntimeError):
    pass


def _right_moments(kernel, dt, M):
    """int_{(L-1)dt}^{L dt} K(s) (L dt - s)/dt ds for L = 1..M."""
    out = np.zeros(M + 1)
    for L in range(1, M + 1):
        lo, hi = (L - 1) * dt, L * dt
        if L == 1 and kernel.exponent != 0.0:
            out[L] = _quad_alg(lambda s: float(kernel.regular(s)) * (hi - s) / dt,
                               0.0, hi, alpha=kernel.exponent)
        else:
            out[L] = _quad_alg(lambda s: float(kernel(s)) * (hi - s) / dt, lo, hi)
    return out


def _node_weights(kernel, grid, need_pairs):
    """Node weights of the product trapezoid rule.

    Wt1[J, k, l] integrates K(t_k - r) h(r) over [0, t_J] for h linear
    between nodes; Wt2[J, a, b, l] does the same for K(t_a - r) K(t_b - r).
    Entries with a maturity below t_J are zero.
    """
    M, dt = grid.M, grid.dt
    n = M + 1
    W1 = lag_weights(kernel, dt, M)
    R1 = _right_moments(kernel, dt, M)
    L1 = W1 - R1
    J, k, l = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    lag = k - l
    ok = k >= J
    left = np.where((l < J) & ok, L1[np.clip(lag, 0, M)], 0.0)
    right = np.where((l >= 1) & (l <= J) & ok, R1[np.clip(lag + 1, 0, M)], 0.0)
    Wt1 = left + right
    if not need_pairs:
        return Wt1, None
    P = pair_lag_table(kernel, dt, M)
    PR = pair_lag_table(kernel, dt, M, moment=1)
    PL = P - PR
    Wt2 = np.zeros((n, n, n, n))
    a = np.arange(n)
    for Jv in range(1, n):
        for lv in range(Jv + 1):
            aa = a[Jv:]
            blk = np.zeros((n - Jv, n - Jv))
            if lv < Jv:
                blk += PL[np.ix_(aa - lv, aa - lv)]
            if lv >= 1:
                blk += PR[np.ix_(aa - lv + 1, aa - lv + 1)]
            Wt2[Jv, Jv:, Jv:, lv] = blk
    return Wt1, Wt2


def _initial(model, grid, N):
    d, n = model.d, grid.M + 1
    G = model.g0(grid.times)  # (n, d)
    F0 = [np.ones(n)]
    masks = [np.ones(n, dtype=bool)]
    for p in range(1, N + 1):
        arr = np.ones((d,) * p + (n,) * p)
        for q in range(p):
            shape = [1] * (2 * p)
            shape[q] = d
            shape[p + q] = n
            arr = arr * G.T.reshape(shape)
        # broadcast over t, inserted before the maturities
        arr = np.broadcast_to(np.expand_dims(arr, p), (d,) * p + (n,) * (p + 1))
        J = np.arange(n).reshape((n,) + (1,) * p)
        mask = np.ones((n,) * (p + 1), dtype=bool)
        for q in range(p):
            kq = np.arange(n).reshape((1,) * (q + 1) + (n,) + (1,) * (p - q - 1))
            mask = mask & (kq >= J)
        masks.append(mask)
        F0.append(np.where(mask, arr, 0.0))
    return F0, masks


def _apply(model, F, Wt1, Wt2, N):
    """Psi f for all levels; arrays follow the layout of ``_initial``."""
    d = model.d
    out = [np.zeros_like(F[0])]
    for p in range(1, N + 1):
        acc = np.zeros_like(F[p])
        Wr, kr = _WORD[:p - 1], _MAT[:p - 1]
        # single insertion at the last position, then symmetrize
        S = np.einsum(f"i,{Wr}l{kr}->{Wr}i{kr}l", model.b0, F[p - 1])
        S = S + np.einsum(f"iY,{Wr}Yl{kr}l->{Wr}i{kr}l", model.B, F[p])
        C = np.einsum(f"{Wr}i{kr}l,Jml->{Wr}iJ{kr}m", S, Wt1, optimize=True)
        for n in range(p):
            acc += np.moveaxis(C, [p - 1, 2 * p], [n, p + 1 + n])
        if p >= 2:
            Wr, kr = _WORD[:p - 2], _MAT[:p - 2]
            S = np.einsum(f"ih,{Wr}l{kr}->{Wr}ih{kr}l", model.A0, F[p - 2])
            S = S + np.einsum(f"Yih,{Wr}Yl{kr}l->{Wr}ih{kr}l", model.A1, F[p - 1])
            S = S + np.einsum(f"YZih,{Wr}YZl{kr}ll->{Wr}ih{kr}l", model.A2, F[p])
            C = np.einsum(f"{Wr}ih{kr}l,Jmnl->{Wr}ihJ{kr}mn", S, Wt2, optimize=True)
            for n in range(p):
                for m in range(n + 1, p):
                    acc += np.moveaxis(C, [p - 2, p - 1, 2 * p - 1, 2 * p],
                                       [n, m, p + 1 + n, p + 1 + m])
        out.append(acc)
    return out


def _diagonal(F, alphas, n):
    diag = np.zeros((n, len(alphas)))
    for a, alpha in enumerate(alphas):
        w = tuple(i for i, k in enumerate(alpha) for _ in range(k))
        p = len(w)
        if p == 0:
            diag[:, a] = F[0]
            continue
        sub = F[p][w]
        idx = np.arange(n)
        diag[:, a] = sub[(idx,) * (p + 1)]
    return diag


def solve_moments_picard(model, kernel, N, grid, tol=1e-10, max_iter=500,
                         memory_limit=2.0e9):
    """Solve the moment system by Picard iteration on dense tensors.

    Contraction is monitored in the norm sup_t exp(-lam t) |f|; lam starts
    at 1 and doubles while the observed ratio of successive differences is
    at least 0.5.  Iteration stops once the plain sup-norm difference is
    below tol.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if not isinstance(grid, Grid):
        grid = Grid(*grid)
    d, n = model.d, grid.M + 1
    need = 8 * (3 * sum(d ** p * n ** (p + 1) for p in range(N + 1))
                + (n ** 4 if N >= 2 else 0) + n ** 3)
    if need > memory_limit:
        raise MemoryBoundExceeded(
            f"dense Picard tensors need {need / 1e9:.2f} GB; reduce M or N")
    Wt1, Wt2 = _node_weights(kernel, grid, N >= 2)
    F0, masks = _initial(model, grid, N)
    times = grid.times
    F = [f.copy() for f in F0]
    lam, doublings = 1.0, 0
    prev = None
    ratios = []
    it = 0
    for it in range(1, max_iter + 1):
        PF = _apply(model, F, Wt1, Wt2, N)
        new = [F0[0]] + [np.where(masks[p], F0[p] + PF[p], 0.0) for p in range(1, N + 1)]
        diffJ = np.zeros(n)
        for p in range(1, N + 1):
            dp = np.abs(new[p] - F[p])
            dp = np.moveaxis(dp, p, 0).reshape(n, -1).max(axis=1)
            diffJ = np.maximum(diffJ, dp)
        F = new
        if not np.all(np.isfinite(diffJ)):
            raise PicardDivergence("Picard iterates became non-finite")
        if diffJ.max() < tol:
            break
        if prev is not None and prev.max() > 0:
            def wnorm(x):
                return np.max(np.exp(-lam * times) * x)
            ratio = wnorm(diffJ) / wnorm(prev)
            while ratio >= 0.5 and doublings < 10 and it > 2:
                lam *= 2
                doublings += 1
                ratio = wnorm(diffJ) / wnorm(prev)
            ratios.append(ratio)
            if ratio >= 0.5 and doublings >= 10:
                raise PicardDivergence(
                    f"no contraction after {doublings} doublings (lambda={lam:g})")
        prev = diffJ
    else:
        raise PicardDivergence(f"no convergence in {max_iter} iterations")
    alphas = multi_indices(N, d)
    diag = _diagonal(F, alphas, n)
    return MomentTable(grid, N, d, alphas, diag, "picard",
                       info={"iterations": it, "lambda": lam,
                             "contraction": ratios[-1] if ratios else 0.0})
