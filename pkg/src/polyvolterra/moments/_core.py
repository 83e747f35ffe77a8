"""Compiled kernels for the moment stepping scheme.

A level-p slice is stored once per multiset of items, an item being a
(maturity slot, letter) pair encoded as ``v = (S - 1 - slot) * d + letter``.
Tuples are kept sorted and ranked in colexicographic order, so the tuples
whose maturities are all at least t_j form a prefix of each level and the
current-time items inserted by the operator are the largest ones.
"""

import numpy as np
from numba import njit


def binomial_table(nmax, kmax):
    """C(n, k) for 0 <= n <= nmax, 0 <= k <= kmax as int64."""
    tab = np.zeros((nmax + 1, kmax + 1), dtype=np.int64)
    tab[:, 0] = 1
    for n in range(1, nmax + 1):
        for k in range(1, min(n, kmax) + 1):
            tab[n, k] = tab[n - 1, k - 1] + tab[n - 1, k]
    if np.any(tab < 0):
        raise OverflowError("binomial table overflow")
    return tab


def level_size(n_items, p):
    """Number of multisets of size p from n_items items."""
    from math import comb
    return comb(n_items + p - 1, p) if p > 0 else 1


@njit(cache=True)
def rank_sorted(u, p, binom):
    r = 0
    for k in range(p):
        r += binom[u[k] + k, k + 1]
    return r


@njit(cache=True)
def next_multiset(u, p):
    """Advance the sorted tuple u[:p] to its colex successor."""
    for k in range(p):
        if k == p - 1 or u[k] < u[k + 1]:
            u[k] += 1
            for q in range(k):
                u[q] = 0
            return


@njit(cache=True)
def _rank_insert1(rest, q, x, binom):
    # rank of sorted(rest[:q] + [x])
    r = 0
    pos = 0
    while pos < q and rest[pos] <= x:
        r += binom[rest[pos] + pos, pos + 1]
        pos += 1
    r += binom[x + pos, pos + 1]
    for k in range(pos, q):
        r += binom[rest[k] + k + 1, k + 2]
    return r


@njit(cache=True)
def _rank_insert2(rest, q, x1, x2, tmp, binom):
    # rank of sorted(rest[:q] + [x1, x2]) with x1 <= x2
    a = 0
    n = 0
    ins = 0
    while n < q + 2:
        if ins == 0 and (a >= q or x1 < rest[a]):
            tmp[n] = x1
            ins = 1
        elif ins == 1 and (a >= q or x2 < rest[a]):
            tmp[n] = x2
            ins = 2
        else:
            tmp[n] = rest[a]
            a += 1
        n += 1
    return rank_sorted(tmp, q + 2, binom)


@njit(cache=True)
def build_inserts(vals, offs, p, n_act, ins, d, comb1, comb2, binom, V1, V2):
    """Gather values the level-p operator reads, for rest tuples of the prefix.

    V1[r, 0] is level p-1 at rest r; V1[r, 1 + l] is level p at rest r with
    item ins[l] added.  V2[r, 0] is level p-2 at rest r, V2[r, 1 + l] level
    p-1 with ins[l] added, V2[r, 1 + d + c] level p with ins[comb1[c]] and
    ins[comb2[c]] added.
    """
    rest = np.zeros(p + 2, dtype=np.int64)
    tmp = np.zeros(p + 2, dtype=np.int64)
    q = p - 1
    cnt = binom[n_act + q - 1, q] if q > 0 else 1
    for r in range(cnt):
        V1[r, 0] = vals[offs[p - 1] + r]
        for l in range(d):
            V1[r, 1 + l] = vals[offs[p] + _rank_insert1(rest, q, ins[l], binom)]
        next_multiset(rest, q)
    if p >= 2:
        q = p - 2
        cnt = binom[n_act + q - 1, q] if q > 0 else 1
        for k in range(q + 2):
            rest[k] = 0
        nc = comb1.shape[0]
        for r in range(cnt):
            V2[r, 0] = vals[offs[p - 2] + r]
            for l in range(d):
                V2[r, 1 + l] = vals[offs[p - 1] + _rank_insert1(rest, q, ins[l], binom)]
            for c in range(nc):
                x1 = ins[comb1[c]]
                x2 = ins[comb2[c]]
                if x2 < x1:
                    x1, x2 = x2, x1
                V2[r, 1 + d + c] = vals[offs[p] + _rank_insert2(rest, q, x1, x2, tmp, binom)]
            next_multiset(rest, q)


@njit(cache=True)
def update_level(out, out_off, p, n_act, d, lag_base, collapsed, binom,
                 V1, V2, act1, act2,
                 sep1, W1, C1, S1, sep2, W2, C2, Q2):
    """Add one step of the level-p operator to out[out_off + rank].

    Single terms use weights W1[L] * C1[i, c] (or S1[L, i, c]) against
    V1[rank without n, c]; pair terms W2[Ln, Lm] * C2[i, k, c] (or
    Q2[Ln, Lm, i, k, c]) against V2[rank without n and m, c].

    Tuples are visited as an outer multiset u_1 <= ... <= u_{p-1} and an
    inner smallest item x = 0..u_1.  Along the inner loop the full rank and
    the ranks of rests that keep x grow by one per item, while rests that
    drop x are fixed, so the inner loop is a streaming update.
    """
    n1 = act1.shape[0]
    n2 = act2.shape[0] if p >= 2 else 0
    if p == 1:
        for x in range(n_act):
            i = x % d
            L = 1 if collapsed else lag_base - x // d
            acc = 0.0
            for a in range(n1):
                c = act1[a]
                if sep1:
                    acc += W1[L] * C1[i, c] * V1[0, c]
                else:
                    acc += S1[L, i, c] * V1[0, c]
            out[out_off + x] += acc
        return
    q = p - 1
    o = np.zeros(q + 1, dtype=np.int64)
    u = np.zeros(p, dtype=np.int64)
    Rn = np.zeros(p, dtype=np.int64)
    R0m = np.zeros(p, dtype=np.int64)
    Rnm = np.zeros((p, p), dtype=np.int64)
    lag = np.zeros(p, dtype=np.int64)
    let = np.zeros(p, dtype=np.int64)
    an = np.zeros((p, max(n1, 1)))
    bnm = np.zeros((p, p, max(n2, 1)))
    h = np.zeros(d)
    g = np.zeros((p, d))
    buf = np.zeros(n_act)
    ix = np.empty(n_act, dtype=np.int64)
    Lx = np.empty(n_act, dtype=np.int64)
    for x in range(n_act):
        ix[x] = x % d
        Lx[x] = 1 if collapsed else lag_base - x // d
    cnt_outer = binom[n_act + q - 1, q]
    for oc in range(cnt_outer):
        for k in range(1, p):
            u[k] = o[k - 1]
            lag[k] = 1 if collapsed else lag_base - u[k] // d
            let[k] = u[k] % d
        Rbase = 0
        R0 = 0
        for k in range(1, p):
            Rbase += binom[u[k] + k, k + 1]
            R0 += binom[u[k] + k - 1, k]
        for n in range(1, p):
            r = 0
            for k in range(1, n):
                r += binom[u[k] + k, k + 1]
            for k in range(n + 1, p):
                r += binom[u[k] + k - 1, k]
            Rn[n] = r
            r = 0
            for k in range(1, n):
                r += binom[u[k] + k - 1, k]
            for k in range(n + 1, p):
                r += binom[u[k] + k - 2, k - 1]
            R0m[n] = r
            for m in range(n + 1, p):
                r = 0
                for k in range(1, n):
                    r += binom[u[k] + k, k + 1]
                for k in range(n + 1, m):
                    r += binom[u[k] + k - 1, k]
                for k in range(m + 1, p):
                    r += binom[u[k] + k - 2, k - 1]
                Rnm[n, m] = r
        # weights that do not involve x
        for n in range(1, p):
            for a in range(n1):
                c = act1[a]
                if sep1:
                    an[n, a] = W1[lag[n]] * C1[let[n], c]
                else:
                    an[n, a] = S1[lag[n], let[n], c]
            for m in range(n + 1, p):
                for a in range(n2):
                    c = act2[a]
                    if sep2:
                        bnm[n, m, a] = W2[lag[n], lag[m]] * C2[let[n], let[m], c]
                    else:
                        bnm[n, m, a] = Q2[lag[n], lag[m], let[n], let[m], c]
        if sep1:
            for i in range(d):
                s = 0.0
                for a in range(n1):
                    c = act1[a]
                    s += C1[i, c] * V1[R0, c]
                h[i] = s
        if sep2:
            for m in range(1, p):
                for i in range(d):
                    s = 0.0
                    for a in range(n2):
                        c = act2[a]
                        s += C2[i, let[m], c] * V2[R0m[m], c]
                    g[m, i] = s
        # one pass per term over the inner items keeps each pass a plain
        # streaming loop; terms are added in a fixed order per tuple
        nx = u[1] + 1
        for x in range(nx):
            buf[x] = 0.0
        if n1 > 0:
            if sep1:
                for x in range(nx):
                    buf[x] += W1[Lx[x]] * h[ix[x]]
            else:
                for x in range(nx):
                    s = 0.0
                    for a in range(n1):
                        c = act1[a]
                        s += S1[Lx[x], ix[x], c] * V1[R0, c]
                    buf[x] += s
            for n in range(1, p):
                r0 = Rn[n]
                for a in range(n1):
                    w = an[n, a]
                    c = act1[a]
                    for x in range(nx):
                        buf[x] += w * V1[r0 + x, c]
        if n2 > 0:
            for m in range(1, p):
                lm = lag[m]
                if sep2:
                    for x in range(nx):
                        buf[x] += W2[lm, Lx[x]] * g[m, ix[x]]
                else:
                    km = let[m]
                    r0 = R0m[m]
                    for a in range(n2):
                        c = act2[a]
                        for x in range(nx):
                            buf[x] += Q2[Lx[x], lm, ix[x], km, c] * V2[r0, c]
            for n in range(1, p):
                for m in range(n + 1, p):
                    r0 = Rnm[n, m]
                    for a in range(n2):
                        w = bnm[n, m, a]
                        c = act2[a]
                        for x in range(nx):
                            buf[x] += w * V2[r0 + x, c]
        base = out_off + Rbase
        for x in range(nx):
            out[base + x] += buf[x]
        next_multiset(o, q)


@njit(cache=True)
def init_product(vals, off, p, n_items, d, S, G):
    """vals[off + rank(u)] = prod_n G[slot(u_n), letter(u_n)] for all tuples."""
    cnt = 1
    u = np.zeros(p + 1, dtype=np.int64)
    # count = C(n_items + p - 1, p) computed iteratively
    num = 1.0
    for k in range(p):
        num = num * (n_items + k) / (k + 1)
    cnt = int(round(num))
    for r in range(cnt):
        prod = 1.0
        for n in range(p):
            v = u[n]
            prod *= G[S - 1 - v // d, v % d]
        vals[off + r] = prod
        next_multiset(u, p)


@njit(cache=True)
def init_indicator(vals, off, p, n_items, d, beta):
    """vals[off + rank(u)] = 1 if the letters of u have multi-index beta."""
    u = np.zeros(p + 1, dtype=np.int64)
    num = 1.0
    for k in range(p):
        num = num * (n_items + k) / (k + 1)
    cnt = int(round(num))
    alpha = np.zeros(d, dtype=np.int64)
    for r in range(cnt):
        for i in range(d):
            alpha[i] = 0
        for n in range(p):
            alpha[u[n] % d] += 1
        same = True
        for i in range(d):
            if alpha[i] != beta[i]:
                same = False
        vals[off + r] = 1.0 if same else 0.0
        next_multiset(u, p)


@njit(cache=True)
def read_diagonal(vals, offs, base, alpha_letters, alpha_level, binom, out):
    """out[a] = value of the tuple of items base + letters of alpha a."""
    u = np.zeros(alpha_letters.shape[1] + 1, dtype=np.int64)
    for a in range(alpha_letters.shape[0]):
        p = alpha_level[a]
        for k in range(p):
            u[k] = base + alpha_letters[a, k]
        out[a] = vals[offs[p] + rank_sorted(u, p, binom)]
