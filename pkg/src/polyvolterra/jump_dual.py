"""Moments from the killed pure-jump dual process.

Each of k coordinates carries an age that grows at unit rate and a letter.
Channels reset ages to 0 (possibly with a new letter) or send coordinates
to the cemetery, where K is taken to be 0.  Along a path the exponent
accumulates the total channel rate kappa, and

    E[X_T^k] = E[exp(int_0^T kappa(Y)) prod_{live m} X0[letter_m]].

Events are simulated by thinning under a constant majorant; the exponent is
integrated exactly between events.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import is_jump_dual_eligible
from .model import PolyModel
from .rng import uniforms

KILL, RESET = 0, 1
_STREAM = 11


class IneligibleKernel(ValueError):
    pass


def _check_kernel(kernel, T):
    ok, reason = is_jump_dual_eligible(kernel, T)
    if not ok:
        raise IneligibleKernel(f"kernel not usable for the jump dual: {reason}")


def kappa_integral(kernel, start_age, duration, T=None):
    """int_0^u K(x0 + tau) dtau for age x0 and duration u (vectorized)."""
    if T is not None:
        _check_kernel(kernel, T)
    x0 = np.asarray(start_age, dtype=float)
    u = np.asarray(duration, dtype=float)
    F0 = kernel.antiderivative(x0)
    if F0 is not None:
        return kernel.antiderivative(x0 + u) - F0
    return _gauss_integral(lambda s: kernel(x0[..., None] + s), u)


_GX, _GW = np.polynomial.legendre.leggauss(20)


def _gauss_integral(f, u):
    u = np.asarray(u, dtype=float)
    s = 0.5 * (_GX + 1.0) * u[..., None]
    return 0.5 * u * np.sum(_GW * f(s), axis=-1)


def _pair_integral(kernel, y1, y2, u):
    """int_0^u K(y1 + s) K(y2 + s) ds, exact for exponential sums."""
    es = kernel.exp_sum()
    if es is None:
        return _gauss_integral(lambda s: kernel(y1[..., None] + s) * kernel(y2[..., None] + s), u)
    out = np.zeros(np.broadcast(y1, y2, u).shape)
    for ca, ba in es:
        for cb, bb in es:
            r = ba + bb
            g = np.expm1(-r * u) / -r if r != 0 else u
            out = out + ca * cb * np.exp(-ba * y1 - bb * y2) * g
    return out


@dataclass
class Channels:
    """Jump channels of the dual process.

    Singles: coordinate m with letter i moves at rate K(y_m) |cs[i, t]| by
    action (skind[t], sletter[t]).  Pairs: coordinates n < m with letters
    (i_m, i_n) move at rate K(y_m) K(y_n) |cp[i_m, i_n, t]|, coordinate m by
    (pkind_m[t], pletter_m[t]) and n by (pkind_n[t], pletter_n[t]).
    """

    cs: np.ndarray
    skind: np.ndarray
    sletter: np.ndarray
    cp: np.ndarray
    pkind_m: np.ndarray
    pletter_m: np.ndarray
    pkind_n: np.ndarray
    pletter_n: np.ndarray

    @property
    def signed(self):
        return bool(np.any(self.cs < 0) or np.any(self.cp < 0))


def channels_from_model(model):
    """Channel tables for b(x) = b0 + Bx and a(x) = A0 + sum A_j x_j + sum A_jk x_j x_k."""
    d = model.d
    cs, sk, sl = [], [], []
    cs.append(model.b0)                 # kill
    sk.append(KILL)
    sl.append(0)
    for j in range(d):                  # reset to letter j at rate K b_j
        cs.append(model.B[:, j])
        sk.append(RESET)
        sl.append(j)
    cp, km, lm, kn, ln = [], [], [], [], []
    cp.append(model.A0)                 # both killed
    km.append(KILL), lm.append(0), kn.append(KILL), ln.append(0)
    for j in range(d):                  # one reset to j, the other killed
        cp.append(0.5 * model.A1[j])
        km.append(RESET), lm.append(j), kn.append(KILL), ln.append(0)
        cp.append(0.5 * model.A1[j])
        km.append(KILL), lm.append(0), kn.append(RESET), ln.append(j)
    for j1 in range(d):                 # both reset, letters (j1, j2)
        for j2 in range(d):
            cp.append(model.A2[j1, j2])
            km.append(RESET), lm.append(j1), kn.append(RESET), ln.append(j2)
    cs = np.stack(cs, axis=-1)
    cp = np.stack(cp, axis=-1)
    keep_s = np.any(cs != 0, axis=0)
    keep_p = np.any(cp != 0, axis=(0, 1))
    arr = np.asarray
    return Channels(cs[:, keep_s], arr(sk)[keep_s], arr(sl)[keep_s],
                    cp[:, :, keep_p], arr(km)[keep_p], arr(lm)[keep_p],
                    arr(kn)[keep_p], arr(ln)[keep_p])


@dataclass(eq=False)
class JumpSamples:
    """Terminal data of simulated dual paths.

    exponent: int_0^T kappa(Y); sign: product of channel signs (signed mode);
    letters: terminal letters (0-based); alive: live coordinates at T;
    n_events: accepted jumps per path.
    """

    exponent: np.ndarray
    sign: np.ndarray
    letters: np.ndarray
    alive: np.ndarray
    n_events: np.ndarray
    T: float
    signed: bool

    @property
    def survivors(self):
        return self.alive.sum(axis=1)

    def weights(self, x0):
        """exp(exponent) * sign * prod over live coordinates of x0[letter]."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        vals = np.where(self.alive, x0[self.letters], 1.0)
        return self.sign * np.exp(self.exponent) * np.prod(vals, axis=1)


def _initial_letters(kvec):
    return np.repeat(np.arange(len(kvec)), kvec).astype(np.int64)


def simulate_dual(channels, kernel, kvec, T, n_samples, seed=0, *, signed=False,
                  batch=200_000):
    """Simulate the dual process from ages 0 with letters given by kvec."""
    kvec = np.asarray(kvec, dtype=int)
    k = int(kvec.sum())
    _check_kernel(kernel, T)
    if channels.signed and not signed:
        raise ValueError("negative channel weights need signed mode")
    letters0 = _initial_letters(kvec)
    out = JumpSamples(np.zeros(n_samples), np.ones(n_samples),
                      np.tile(letters0, (n_samples, 1)), np.ones((n_samples, k), bool),
                      np.zeros(n_samples, dtype=np.int64), float(T), signed)
    if k == 0 or n_samples == 0:
        return out
    cs, cp = np.abs(channels.cs), np.abs(channels.cp)
    s1 = cs.sum(axis=1)                  # per letter
    s2 = cp.sum(axis=2)                  # per letter pair
    Kbar = float(kernel.sup(T))
    lam = k * s1.max() * Kbar + 0.5 * k * (k - 1) * (s2.max() if k > 1 else 0.0) * Kbar ** 2
    singles = [(m, t) for m in range(k) for t in range(cs.shape[1])]
    pairs = [(m, n, t) for m in range(k) for n in range(m) for t in range(cp.shape[2])]
    for b0 in range(0, n_samples, batch):
        rows = range(b0, min(n_samples, b0 + batch))
        sl = slice(rows.start, rows.stop)
        _run_batch(out, sl, rows, kernel, channels, cs, cp, s1, s2, lam, singles, pairs,
                   k, T, seed)
    return out


def _rates(kernel, ages, alive, letters, cs, cp, singles, pairs):
    Kv = np.where(alive, kernel(ages), 0.0)
    cols = []
    for m, t in singles:
        cols.append(Kv[:, m] * cs[letters[:, m], t])
    for m, n, t in pairs:
        cols.append(Kv[:, m] * Kv[:, n] * cp[letters[:, m], letters[:, n], t])
    return np.stack(cols, axis=1)


def _run_batch(out, sl, rows, kernel, ch, cs, cp, s1, s2, lam, singles, pairs, k, T, seed):
    nb = len(rows)
    ages = np.zeros((nb, k))
    alive = out.alive[sl].copy()
    letters = out.letters[sl].copy()
    expo = np.zeros(nb)
    sign = np.ones(nb)
    nev = np.zeros(nb, dtype=np.int64)
    t = np.zeros(nb)
    active = np.ones(nb, dtype=bool)
    it = 0
    idx_all = np.arange(nb)
    while active.any():
        idx = idx_all[active]
        U = uniforms(seed, _STREAM, rows, 4, block=it)[idx]
        it += 1
        gap = -np.log(U[:, 0]) / lam if lam > 0 else np.full(idx.size, np.inf)
        rem = T - t[idx]
        step = np.minimum(gap, rem)
        a, al, le = ages[idx], alive[idx], letters[idx]
        # exponent over the step, exact between events
        inc = np.zeros(idx.size)
        for m in range(k):
            w = np.where(al[:, m], s1[le[:, m]], 0.0)
            if np.any(w):
                inc += w * kappa_integral(kernel, a[:, m], step)
        for m in range(k):
            for n in range(m):
                w = np.where(al[:, m] & al[:, n], s2[le[:, m], le[:, n]], 0.0)
                if np.any(w):
                    inc += w * _pair_integral(kernel, a[:, m], a[:, n], step)
        expo[idx] += inc
        a = a + step[:, None]
        t[idx] += step
        finished = gap >= rem
        active[idx[finished]] = False
        go = ~finished
        if not go.any():
            ages[idx] = a
            continue
        R = _rates(kernel, a[go], al[go], le[go], cs, cp, singles, pairs)
        tot = R.sum(axis=1)
        acc = U[go, 1] * lam < tot
        cum = np.cumsum(R, axis=1)
        pick = np.sum(cum < (U[go, 2] * tot)[:, None], axis=1)
        pick = np.minimum(pick, R.shape[1] - 1)
        gi = np.flatnonzero(go)[acc]
        pk = pick[acc]
        for c in np.unique(pk):
            rsel = gi[pk == c]
            if c < len(singles):
                m, tt = singles[c]
                sign[idx[rsel]] *= np.sign(ch.cs[le[rsel, m], tt])
                _act(a, al, le, rsel, m, ch.skind[tt], ch.sletter[tt])
            else:
                m, n, tt = pairs[c - len(singles)]
                sign[idx[rsel]] *= np.sign(ch.cp[le[rsel, m], le[rsel, n], tt])
                _act(a, al, le, rsel, m, ch.pkind_m[tt], ch.pletter_m[tt])
                _act(a, al, le, rsel, n, ch.pkind_n[tt], ch.pletter_n[tt])
        ages[idx], alive[idx], letters[idx] = a, al, le
        nev[idx[gi]] += 1
    out.exponent[sl] = expo
    out.sign[sl] = sign
    out.alive[sl] = alive
    out.letters[sl] = letters
    out.n_events[sl] = nev


def _act(a, al, le, rsel, m, kind, letter):
    if kind == KILL:
        al[rsel, m] = False
    else:
        a[rsel, m] = 0.0
        le[rsel, m] = letter


# ---------------------------------------------------------------------------
# estimators


def _estimate(samples, x0):
    w = samples.weights(x0)
    n = w.size
    se = float(np.std(w, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(np.sum(w) / n), se


def simulate_jump_dual_1d(b1, A11, kernel, k, T, n_samples=1, seed=0, *, signed=False):
    """Homogeneous one-dimensional dual: single resets at rate b1 K, pair resets at A11 K K."""
    if not signed and (b1 < 0 or A11 < 0):
        raise ValueError("b1 and A11 must be nonnegative outside signed mode")
    model = PolyModel.scalar(b1=b1, A11=A11)
    return simulate_dual(channels_from_model(model), kernel, [k], T, n_samples, seed,
                         signed=signed)


def jump_dual_moment_1d(b1, A11, kernel, k, T, x0=1.0, n_samples=100_000, seed=0, *,
                        signed=False):
    """E[X_T^k] = x0^k E[exp(int kappa)] and its standard error."""
    if k == 0:
        return 1.0, 0.0
    s = simulate_jump_dual_1d(b1, A11, kernel, k, T, n_samples, seed, signed=signed)
    return _estimate(s, [x0])


def simulate_jump_dual_inhom(b0, b1, A0, A1, A11, kernel, k, T, n_samples=1, seed=0, *,
                             signed=False):
    """One-dimensional dual with cemetery channels for b0, A0 and A1."""
    if not signed and min(b0, b1, A0, A1, A11) < 0:
        raise ValueError("coefficients must be nonnegative outside signed mode")
    model = PolyModel.scalar(b0=b0, b1=b1, A0=A0, A1=A1, A11=A11)
    return simulate_dual(channels_from_model(model), kernel, [k], T, n_samples, seed,
                         signed=signed)


def jump_dual_moment_inhom(b0, b1, A0, A1, A11, kernel, k, T, x0=1.0, n_samples=100_000,
                           seed=0, *, signed=False):
    """E[X_T^k] = E[exp(int kappa) x0^(live coordinates)] and its standard error."""
    if k == 0:
        return 1.0, 0.0
    s = simulate_jump_dual_inhom(b0, b1, A0, A1, A11, kernel, k, T, n_samples, seed,
                                 signed=signed)
    return _estimate(s, [x0])


def jump_dual_moment_multi(model, kernel, kvec, T, n_samples=100_000, seed=0, *,
                           x0=None, signed=False):
    """E[X_T^kvec] for a d-dimensional model and its standard error.

    Letters start as kvec_1 ones, kvec_2 twos and so on; b_j resets a
    coordinate to letter j and A_{j1 j2} resets a pair to letters (j1, j2).
    Nonzero b0, A0 or A_j add cemetery channels as in the scalar case.
    """
    kvec = np.asarray(kvec, dtype=int)
    if kvec.size != model.d or np.any(kvec < 0):
        raise ValueError(f"kvec must hold {model.d} nonnegative entries")
    if kvec.sum() == 0:
        return 1.0, 0.0
    x0 = model.x0 if x0 is None else np.asarray(x0, float)
    ch = channels_from_model(model)
    s = simulate_dual(ch, kernel, kvec, T, n_samples, seed, signed=signed)
    return _estimate(s, x0)
