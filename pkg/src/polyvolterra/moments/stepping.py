"""Explicit time stepping of the lifted moment system and its coefficient twin.

Each step t_j -> t_{j+1} adds to every stored tuple the operator's five sums
with integrands frozen at r = t_j and exact kernel-cell weights.  The values
needed at r = t_j carry the current time as extra maturities, which the
slice at t_j still holds.
"""

from dataclasses import dataclass, field

import numpy as np

from ..grid import Grid
from ..kernels import Constant, lag_weights, pair_lag_table
from ..model import multi_indices
from . import _core

DEFAULT_MEMORY_LIMIT = 2.5e9  # bytes


class MomentBlowup(FloatingPointError):
    def __init__(self, last_valid_time):
        super().__init__(f"moments became non-finite after t={last_valid_time}")
        self.last_valid_time = last_valid_time


class MemoryBoundExceeded(MemoryError):
    pass


@dataclass(eq=False)
class MomentTable:
    """Diagonal moment history and the stored slices of one solve."""

    grid: Grid
    N: int
    d: int
    alphas: list
    diag: np.ndarray            # (M + 1, len(alphas))
    method: str = "step"
    query_times: tuple = ()
    final_slice: np.ndarray = None
    offsets: np.ndarray = None
    n_slots: int = 1
    snapshots: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def alpha_index(self, alpha):
        alpha = tuple(int(a) for a in np.atleast_1d(alpha))
        if len(alpha) != self.d:
            raise ValueError(f"multi-index {alpha} has wrong length for d={self.d}")
        if sum(alpha) > self.N:
            raise ValueError(f"|alpha|={sum(alpha)} exceeds the level N={self.N}")
        return self.alphas.index(alpha)

    def moment(self, t, alpha):
        return moments_at_diagonal(self, t, alpha)

    def series(self, alpha):
        return self.diag[:, self.alpha_index(alpha)]

    def slice_value(self, j, items):
        """Stored value at snapshot step j for (slot, letter) pairs (0-based)."""
        if j not in self.snapshots:
            raise KeyError(f"no snapshot at step {j}")
        vals = self.snapshots[j]
        p = len(items)
        S, d = self.n_slots, self.d
        u = np.sort(np.array([(S - 1 - s) * d + i for s, i in items], dtype=np.int64))
        binom = _core.binomial_table(S * d + self.N + 2, self.N + 2)
        return float(vals[self.offsets[p] + _core.rank_sorted(u, p, binom)])


def moments_at_diagonal(table, t, alpha):
    """E[X_t^alpha] read from the diagonal of a moment table."""
    j = table.grid.index(t)
    if table.query_times and not any(abs(t - q) <= 1e-12 * max(1, abs(q))
                                     for q in table.query_times):
        raise ValueError(f"time {t} was not requested as a query time")
    return float(table.diag[j, table.alpha_index(alpha)])


def _combos(d):
    pairs = [(a, b) for a in range(d) for b in range(a, d)]
    return (np.array([a for a, _ in pairs], dtype=np.int64),
            np.array([b for _, b in pairs], dtype=np.int64))


def coefficient_tensors(model):
    """C1[i, c] and C2[i, k, c] for the separable operator weights.

    Single combos: c = 0 is the b0 term, c = 1 + l the b_l term.  Pair
    combos: c = 0 is A0, c = 1 + l is A_l, c = 1 + d + m the pair
    (l1 <= l2) number m of A_{l1 l2} + A_{l2 l1}.
    """
    d = model.d
    c1, c2 = _combos(d)
    C1 = np.zeros((d, 1 + d))
    C1[:, 0] = model.b0
    C1[:, 1:] = model.B
    C2 = np.zeros((d, d, 1 + d + len(c1)))
    C2[:, :, 0] = model.A0
    for l in range(d):
        C2[:, :, 1 + l] = model.A1[l]
    for m, (a, b) in enumerate(zip(c1, c2)):
        A = model.A2[a, b] if a == b else model.A2[a, b] + model.A2[b, a]
        C2[:, :, 1 + d + m] = A
    return C1, C2


def _alpha_letters(alphas, N):
    letters = np.zeros((len(alphas), max(N, 1)), dtype=np.int64)
    levels = np.zeros(len(alphas), dtype=np.int64)
    for a, alpha in enumerate(alphas):
        w = [i for i, k in enumerate(alpha) for _ in range(k)]
        levels[a] = len(w)
        letters[a, :len(w)] = w
    return letters, levels


class Stepper:
    """Forward stepping machinery shared by the moment solvers.

    Parameters are the lag-indexed operator weights.  With ``sep1`` the
    single weights are W1[L] * C1[i, c], otherwise S1[L, i, c]; likewise
    for pairs with W2, C2 or Q2.  ``collapsed`` treats every lag as 1 and
    stores a single maturity slot, which is exact when the weights do not
    depend on the lag and the initial data do not depend on the maturity.
    """

    def __init__(self, d, N, grid, *, collapsed=False, W1=None, C1=None, S1=None,
                 W2=None, C2=None, Q2=None, memory_limit=DEFAULT_MEMORY_LIMIT):
        self.d, self.N, self.grid = d, N, grid
        self.collapsed = collapsed
        M = grid.M
        self.S = 1 if collapsed else M + 1
        self.n_items = self.S * d
        self.comb1, self.comb2 = _combos(d)
        nc2 = 1 + d + len(self.comb1)
        self.sep1 = S1 is None
        self.sep2 = Q2 is None
        self.W1 = np.zeros(2) if W1 is None else np.asarray(W1, float)
        self.C1 = np.zeros((d, 1 + d)) if C1 is None else np.asarray(C1, float)
        self.S1 = np.zeros((1, 1, 1)) if S1 is None else np.asarray(S1, float)
        self.W2 = np.zeros((2, 2)) if W2 is None else np.asarray(W2, float)
        self.C2 = np.zeros((d, d, nc2)) if C2 is None else np.asarray(C2, float)
        self.Q2 = np.zeros((1, 1, 1, 1, 1)) if Q2 is None else np.asarray(Q2, float)
        src1 = self.C1 if self.sep1 else self.S1.reshape(-1, 1 + d)
        src2 = self.C2.reshape(-1, nc2) if self.sep2 else self.Q2.reshape(-1, nc2)
        if self.sep1 and not np.any(self.W1):
            src1 = np.zeros_like(src1)
        if self.sep2 and not np.any(self.W2):
            src2 = np.zeros_like(src2)
        self.act1 = np.flatnonzero(np.any(src1 != 0, axis=0)).astype(np.int64)
        self.act2 = np.flatnonzero(np.any(src2 != 0, axis=0)).astype(np.int64)

        sizes = [_core.level_size(self.n_items, p) for p in range(N + 1)]
        v1 = _core.level_size(self.n_items, max(N - 1, 0)) * (1 + d)
        v2 = _core.level_size(self.n_items, max(N - 2, 0)) * nc2
        need = 8 * (sum(sizes) + v1 + v2)
        if need > memory_limit:
            raise MemoryBoundExceeded(self._memory_message(need, memory_limit))
        self.offs = np.zeros(N + 2, dtype=np.int64)
        self.offs[1:] = np.cumsum(sizes)
        self.vals = np.zeros(self.offs[-1])
        self.V1 = np.zeros((_core.level_size(self.n_items, max(N - 1, 0)), 1 + d))
        self.V2 = np.zeros((_core.level_size(self.n_items, max(N - 2, 0)), nc2))
        self.binom = _core.binomial_table(self.n_items + N + 2, N + 2)
        self.alphas = multi_indices(N, d)
        self.letters, self.levels = _alpha_letters(self.alphas, N)

    def _memory_message(self, need, limit):
        M, d, N = self.grid.M, self.d, self.N
        m_ok = M
        while m_ok > 1 and 8 * sum(_core.level_size((m_ok + 1) * d, p)
                                   for p in range(N + 1)) * 1.2 > limit:
            m_ok = int(m_ok * 0.8)
        return (f"moment tables need {need / 1e9:.2f} GB for d={d}, N={N}, M={M} "
                f"(limit {limit / 1e9:.2f} GB); reduce M to about {m_ok} or lower N")

    # initial data -----------------------------------------------------------

    def init_product(self, G, level0=1.0):
        """Initial slice prod_n G[slot_n, letter_n]; G has shape (S, d)."""
        G = np.ascontiguousarray(G, dtype=float)
        self.vals[0] = level0
        for p in range(1, self.N + 1):
            _core.init_product(self.vals, self.offs[p], p, self.n_items, self.d,
                               self.S, G)

    def init_indicator(self, beta):
        beta = np.asarray(beta, dtype=np.int64)
        self.vals[0] = 1.0 if not np.any(beta) else 0.0
        for p in range(1, self.N + 1):
            _core.init_indicator(self.vals, self.offs[p], p, self.n_items, self.d, beta)

    # stepping ---------------------------------------------------------------

    def _n_act(self, j):
        return self.d if self.collapsed else (self.S - 1 - j) * self.d

    def _diag_base(self, j):
        return 0 if self.collapsed else (self.S - 1 - j) * self.d

    def read_diagonal(self, j, out):
        _core.read_diagonal(self.vals, self.offs, self._diag_base(j), self.letters,
                            self.levels, self.binom, out)

    def step(self, j):
        d = self.d
        n_act = self._n_act(j)
        ins = (np.arange(d) if self.collapsed else n_act + np.arange(d)).astype(np.int64)
        lag_base = n_act // d
        for p in range(self.N, 0, -1):
            _core.build_inserts(self.vals, self.offs, p, n_act, ins, d, self.comb1,
                                self.comb2, self.binom, self.V1, self.V2)
            _core.update_level(self.vals, self.offs[p], p, n_act, d, lag_base,
                               self.collapsed, self.binom, self.V1, self.V2,
                               self.act1, self.act2,
                               self.sep1, self.W1, self.C1, self.S1,
                               self.sep2, self.W2, self.C2, self.Q2)

    def run(self, snapshots=()):
        M = self.grid.M
        diag = np.full((M + 1, len(self.alphas)), np.nan)
        self.read_diagonal(0, diag[0])
        snaps = {}
        snapshots = set(snapshots)
        for j in range(M):
            if j in snapshots:
                snaps[j] = self.vals.copy()
            self.step(j)
            self.read_diagonal(j + 1, diag[j + 1])
            if not np.all(np.isfinite(diag[j + 1])):
                raise MomentBlowup(self.grid.times[j])
        if M in snapshots:
            snaps[M] = self.vals.copy()
        return diag, snaps


def _main_weights(model, kernel, grid, collapsed):
    if collapsed:
        c = kernel.c
        W1 = np.array([0.0, c * grid.dt])
        W2 = np.array([[0.0, 0.0], [0.0, c * c * grid.dt]])
    else:
        W1 = lag_weights(kernel, grid.dt, grid.M)
        W2 = pair_lag_table(kernel, grid.dt, grid.M)
    return W1, W2


def _is_collapsible(model, kernel):
    return isinstance(kernel, Constant) and model.constant_g0


def solve_moments(model, kernel, N, grid, query_times=None, *, snapshots=(),
                  memory_limit=DEFAULT_MEMORY_LIMIT, collapse=True):
    """Solve the lifted moment system up to level N by explicit stepping.

    Returns a MomentTable whose diagonal holds E[X_t^alpha] for |alpha| <= N
    at every grid time.  For a constant kernel and constant initial value the
    maturity variables drop out and a single slot is stored.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if not isinstance(grid, Grid):
        grid = Grid(*grid)
    collapsed = collapse and _is_collapsible(model, kernel)
    W1, W2 = _main_weights(model, kernel, grid, collapsed)
    C1, C2 = coefficient_tensors(model)
    st = Stepper(model.d, N, grid, collapsed=collapsed, W1=W1, C1=C1, W2=W2, C2=C2,
                 memory_limit=memory_limit)
    if collapsed:
        G = model.x0[None, :]
    else:
        G = model.g0(grid.times)
    st.init_product(G)
    diag, snaps = st.run(snapshots)
    qt = tuple(float(t) for t in query_times) if query_times is not None else ()
    for t in qt:
        grid.index(t)
    return MomentTable(grid, N, model.d, st.alphas, diag, "step", qt, st.vals.copy(),
                       st.offs.copy(), st.S, snaps, {"collapsed": collapsed})


@dataclass(eq=False)
class CoeffTable:
    """Coefficient functions C_beta for one target multi-index beta."""

    beta: tuple
    table: MomentTable

    def c(self, t, alpha):
        """c_beta(t) multiplying X0^beta in E[X_t^alpha]."""
        return self.table.moment(t, alpha)

    def series(self, alpha):
        return self.table.series(alpha)


def solve_coefficients(model, kernel, N, beta, grid, *, snapshots=(),
                       memory_limit=DEFAULT_MEMORY_LIMIT, collapse=True):
    """Solve the coefficient system for C_beta up to level N.

    The initial value of the model is ignored; moments are recovered as
    sum_beta C_beta X0^beta.
    """
    beta = tuple(int(b) for b in np.atleast_1d(beta))
    if len(beta) != model.d or sum(beta) > N or min(beta) < 0:
        raise ValueError(f"need a multi-index of length {model.d} with |beta| <= {N}")
    if not isinstance(grid, Grid):
        grid = Grid(*grid)
    collapsed = collapse and isinstance(kernel, Constant)
    W1, W2 = _main_weights(model, kernel, grid, collapsed)
    C1, C2 = coefficient_tensors(model)
    st = Stepper(model.d, N, grid, collapsed=collapsed, W1=W1, C1=C1, W2=W2, C2=C2,
                 memory_limit=memory_limit)
    st.init_indicator(beta)
    diag, snaps = st.run(snapshots)
    tab = MomentTable(grid, N, model.d, st.alphas, diag, "coefficients", (),
                      st.vals.copy(), st.offs.copy(), st.S, snaps,
                      {"collapsed": collapsed, "beta": beta})
    return CoeffTable(beta, tab)


def solve_all_coefficients(model, kernel, N, grid, **kw):
    """CoeffTables for every beta with |beta| <= N."""
    return {beta: solve_coefficients(model, kernel, N, beta, grid, **kw)
            for beta in multi_indices(N, model.d)}


def reconstruct_moments(coeffs, x0, t, alpha):
    """sum_beta c_beta(t) x0^beta for E[X_t^alpha]."""
    x0 = np.atleast_1d(np.asarray(x0, float))
    total = 0.0
    for beta, ct in coeffs.items():
        if sum(beta) > sum(alpha):
            continue
        total += ct.c(t, alpha) * float(np.prod(x0 ** np.array(beta)))
    return total
