"""Moments of the classical polynomial diffusion (constant unit kernel).

With K = 1 the process is a polynomial diffusion, whose generator maps
polynomials of degree at most N into themselves.  The moment vector then
solves a linear ODE with constant coefficients.
"""

import numpy as np

from ..model import multi_indices


def generator_matrix(model, N):
    """L with d/dt E[X^alpha] = sum_beta L[alpha, beta] E[X^beta].

    Rows and columns follow ``multi_indices(N, d)``.
    """
    d = model.d
    alphas = multi_indices(N, d)
    pos = {a: n for n, a in enumerate(alphas)}
    L = np.zeros((len(alphas), len(alphas)))

    def add(row, alpha, coef):
        if coef != 0.0:
            L[row, pos[tuple(alpha)]] += coef

    for r, alpha in enumerate(alphas):
        a = np.array(alpha)
        for i in range(d):
            if a[i] == 0:
                continue
            base = a.copy()
            base[i] -= 1
            # drift b_i(x) * alpha_i x^(alpha - e_i)
            add(r, base, a[i] * model.b0[i])
            for l in range(d):
                e = base.copy()
                e[l] += 1
                add(r, e, a[i] * model.B[i, l])
        for i in range(d):
            for j in range(d):
                if i == j:
                    if a[i] < 2:
                        continue
                    c = 0.5 * a[i] * (a[i] - 1)
                else:
                    if a[i] == 0 or a[j] == 0:
                        continue
                    c = 0.5 * a[i] * a[j]
                base = a.copy()
                base[i] -= 1
                base[j] -= 1
                add(r, base, c * model.A0[i, j])
                for l in range(d):
                    e = base.copy()
                    e[l] += 1
                    add(r, e, c * model.A1[l][i, j])
                for l in range(d):
                    for m in range(d):
                        e = base.copy()
                        e[l] += 1
                        e[m] += 1
                        add(r, e, c * model.A2[l, m][i, j])
    return L, alphas


def classical_moments_ode(model, x0, N, t, n_steps=None):
    """E[X_t^alpha] for all |alpha| <= N by classical fourth-order Runge-Kutta.

    Returns a dict alpha -> value.
    """
    L, alphas = generator_matrix(model, N)
    x0 = np.atleast_1d(np.asarray(x0, float))
    m = np.array([np.prod(x0 ** np.array(a)) for a in alphas])
    if t > 0:
        if n_steps is None:
            rate = max(1.0, np.abs(L).sum(axis=1).max() * t)
            n_steps = int(np.ceil(200 * rate))
        h = t / n_steps
        for _ in range(n_steps):
            k1 = L @ m
            k2 = L @ (m + 0.5 * h * k1)
            k3 = L @ (m + 0.5 * h * k2)
            k4 = L @ (m + h * k3)
            m = m + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return dict(zip(alphas, m))
