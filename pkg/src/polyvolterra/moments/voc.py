"""Variation-of-constants formulas built on the resolvent R_B and E_B.

Removing the linear drift with R_B gives X_t = g~_0(t) + int E_B(t-s) sigma dW,
so the first moment is g~_0 and higher moments solve equations driven only
by the diffusion coefficients.
"""

import numpy as np

from ..convolution import GridFunction, compute_EB, solve_resolvent_RB
from ..grid import Grid
from ..kernels import lag_weights, pair_lag_table
from ..model import multi_indices
from .stepping import (DEFAULT_MEMORY_LIMIT, MomentTable, Stepper,
                       coefficient_tensors)


def _grid(grid):
    return grid if isinstance(grid, Grid) else Grid(*grid)


def _cell_conv(R, f):
    """int_0^{t_j} R(t_j - s) f(s) ds with R constant on each lag cell.

    R has right-endpoint values R[L] on ((L-1) dt, L dt]; f is averaged over
    the matching cell.  R is (M+1, d, d), f is (M+1, d); returns (M+1, d).
    """
    M = R.shape[0] - 1
    dt_f = 0.5 * (f[:-1] + f[1:])      # cell averages, cell c = [t_c, t_{c+1}]
    out = np.zeros_like(f)
    for j in range(1, M + 1):
        # cell c = j - L for L = 1..j
        out[j] = np.einsum("lab,lb->a", R[1:j + 1], dt_f[j - 1::-1][:j])
    return out


def resolvent_pair(model, kernel, grid):
    R = solve_resolvent_RB(kernel, model.B, grid)
    return R, compute_EB(kernel, R)


def first_moment_voc(model, kernel, grid, g0=None, R=None, E=None):
    """E[X_t] = g~_0(t) = g_0(t) - (R_B * g_0)(t) + (int_0^t E_B) b_0."""
    grid = _grid(grid)
    dt, M = grid.dt, grid.M
    if R is None:
        R, E = resolvent_pair(model, kernel, grid)
    G = model.g0(grid.times) if g0 is None else np.asarray(g0, float).reshape(M + 1, -1)
    d = model.d
    Rv = R.values.reshape(M + 1, d, d)
    edges = grid.times
    F = kernel.antiderivative(edges)
    if F is None:
        F = np.concatenate([[0.0], np.cumsum(lag_weights(kernel, dt, M)[1:])])
    # int_0^t E_B = F - R * F, each a d x d matrix
    FI = F[:, None, None] * np.eye(d)
    RF = np.stack([_cell_conv(Rv, FI[:, :, k]) for k in range(d)], axis=-1) * dt
    intE = FI - RF
    out = G - dt * _cell_conv(Rv, G) + np.einsum("jab,b->ja", intE, model.b0)
    return GridFunction(dt, out)


def _phi(kernel, E, grid):
    """Phi_L = E_B(t_L) / K(t_L) with Phi_0 = I; None when K vanishes."""
    M = grid.M
    Kt = kernel(grid.times[1:])
    if np.any(Kt == 0):
        return None
    d = E.shape[-1]
    phi = np.empty_like(E)
    phi[0] = np.eye(d)
    phi[1:] = E[1:] / Kt[:, None, None]
    return phi


def second_moment_voc(model, kernel, grid, R=None, E=None, m1=None):
    """E[X_t X_t^T] from g~_0 g~_0^T + int E_B(t-r) E[a(X_r)] E_B(t-r)^T dr.

    The expectation of a(X_r) is linear in the first and second moments, so
    this is a linear Volterra equation, solved forward with the integrand
    frozen at the left end of each cell.  The kernel factors are integrated
    exactly and E_B / K is interpolated linearly across the cell.
    Returns a GridFunction with (M+1, d, d) values.
    """
    grid = _grid(grid)
    dt, M, d = grid.dt, grid.M, model.d
    if R is None:
        R, E = resolvent_pair(model, kernel, grid)
    if m1 is None:
        m1 = first_moment_voc(model, kernel, grid, R=R, E=E)
    Ev = E.values.reshape(M + 1, d, d)
    g = m1.values.reshape(M + 1, d)
    phi = _phi(kernel, Ev, grid)
    if phi is not None:
        P = np.diag(pair_lag_table(kernel, dt, M))
        PR = np.diag(pair_lag_table(kernel, dt, M, moment=1))
        PL = P - PR
    S = np.zeros((M + 1, d, d))
    Ea = np.zeros((M + 1, d, d))
    if phi is not None:
        left = PL[:, None, None] * phi          # lag L, weight on Phi_L
        right = PR[1:, None, None] * phi[:-1]   # lag L, weight on Phi_{L-1}
        right = np.concatenate([np.zeros((1, d, d)), right])
    else:
        left = 0.5 * dt * Ev
        right = np.concatenate([np.zeros((1, d, d)), 0.5 * dt * Ev[:-1]])
        phi = Ev
    phim = np.concatenate([np.zeros((1, d, d)), phi[:-1]])
    for j in range(M + 1):
        acc = np.outer(g[j], g[j])
        if j > 0:
            A = Ea[j - 1::-1][:j]                # a at r = t_{j-L}, L = 1..j
            acc = acc + np.einsum("lab,lbc,ldc->ad", left[1:j + 1], A, phi[1:j + 1])
            acc = acc + np.einsum("lab,lbc,ldc->ad", right[1:j + 1], A, phim[1:j + 1])
        S[j] = 0.5 * (acc + acc.T)
        Ea[j] = (model.A0 + np.einsum("i,ijk->jk", g[j], model.A1)
                 + np.einsum("ij,ijkl->kl", S[j], model.A2))
    return GridFunction(dt, S)


def _e_pair_weights(kernel, E, grid, d):
    """Cell integrals of E_B(t_a - r) (.) E_B(t_b - r)^T by lag pair.

    Returns (W, Phi) where W is (PL, PR) and Phi the E_B / K samples.
    """
    M, dt = grid.M, grid.dt
    Ev = E.values.reshape(M + 1, d, d)
    phi = _phi(kernel, Ev, grid)
    if phi is None:
        raise ValueError("kernel vanishes on the grid; E_B / K is undefined")
    P = pair_lag_table(kernel, dt, M)
    PR = pair_lag_table(kernel, dt, M, moment=1)
    return (P - PR, PR), phi


def affine_moments_recursive(model, kernel, N, grid, *, memory_limit=DEFAULT_MEMORY_LIMIT):
    """Moments of an affine model from the drift-free lifted system.

    With A_jk = 0, level p of E[prod g~_t(T_n)] only needs levels p-1 and
    p-2: the drift is absorbed in g~_0 and E_B, and the pair terms carry
    E_B(T_n - r) A E_B(T_m - r)^T.
    """
    if not model.is_affine:
        raise ValueError("affine recursion needs A_jk = 0 for all j, k")
    if N < 1:
        raise ValueError("N must be at least 1")
    grid = _grid(grid)
    d, M = model.d, grid.M
    R, E = resolvent_pair(model, kernel, grid)
    g = first_moment_voc(model, kernel, grid, R=R, E=E).values.reshape(M + 1, d)
    (PL, PR), phi = _e_pair_weights(kernel, E, grid, d)
    _, C2 = coefficient_tensors(model)
    L = np.arange(M + 1)
    Lm1 = np.maximum(L - 1, 0)
    if d == 1:
        f = phi[:, 0, 0]
        W2 = PL * np.outer(f, f) + PR * np.outer(f[Lm1], f[Lm1])
        W2[0, :] = W2[:, 0] = 0.0
        Q2 = None
    else:
        need = 8 * (M + 1) ** 2 * d * d * C2.shape[-1]
        if need > memory_limit / 4:
            raise MemoryError(f"E_B pair weights need {need / 1e9:.2f} GB; reduce M")
        Q2 = (np.einsum("ab,aik,klc,bjl->abijc", PL, phi, C2, phi)
              + np.einsum("ab,aik,klc,bjl->abijc", PR, phi[Lm1], C2, phi[Lm1]))
        Q2[0] = 0.0
        Q2[:, 0] = 0.0
        W2 = None
    # the maturity variable drops out when neither weights nor data vary
    if Q2 is None:
        flat = np.allclose(W2[1:, 1:], W2[1, 1], rtol=1e-13, atol=0)
    else:
        flat = np.allclose(Q2[1:, 1:], Q2[1, 1], rtol=1e-13, atol=0)
    collapsed = flat and np.allclose(g, g[0], rtol=1e-13, atol=0)
    if collapsed:
        if Q2 is None:
            W2 = np.array([[0.0, 0.0], [0.0, W2[1, 1]]])
        else:
            Q2 = Q2[:2, :2].copy()
        G = g[:1]
    else:
        G = g.copy()
    st = Stepper(d, N, grid, collapsed=collapsed, W1=np.zeros(2),
                 C1=np.zeros((d, 1 + d)), W2=W2, C2=C2 if Q2 is None else None,
                 Q2=Q2, memory_limit=memory_limit)
    st.init_product(G)
    diag, _ = st.run()
    return MomentTable(grid, N, d, st.alphas, diag, "affine",
                       info={"collapsed": collapsed})


def voc_moments(model, kernel, grid):
    """First and second moments as a MomentTable with N = 2."""
    grid = _grid(grid)
    d, M = model.d, grid.M
    R, E = resolvent_pair(model, kernel, grid)
    m1 = first_moment_voc(model, kernel, grid, R=R, E=E)
    m2 = second_moment_voc(model, kernel, grid, R=R, E=E, m1=m1)
    alphas = multi_indices(2, d)
    diag = np.zeros((M + 1, len(alphas)))
    g = m1.values.reshape(M + 1, d)
    S = m2.values
    for a, alpha in enumerate(alphas):
        idx = [i for i, k in enumerate(alpha) for _ in range(k)]
        if len(idx) == 0:
            diag[:, a] = 1.0
        elif len(idx) == 1:
            diag[:, a] = g[:, idx[0]]
        else:
            diag[:, a] = S[:, idx[0], idx[1]]
    return MomentTable(grid, 2, d, alphas, diag, "voc")
