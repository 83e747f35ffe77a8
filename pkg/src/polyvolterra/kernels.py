"""Convolution kernels and their cell integrals.

Every kernel is a scalar function on (0, inf), applied to vector-valued
processes as a multiple of the identity.  Near the origin a kernel behaves
like ``t**exponent`` times a smooth factor; quadratures use that split to
integrate the singular cells exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-12, limit=400)


class KernelDomainError(ValueError):
    """Raised when a singular kernel is evaluated at or below the origin."""


def _quad_alg(func, a, b, alpha=0.0, beta=0.0):
    """Integrate func(x) (x-a)**alpha (b-x)**beta over [a, b]."""
    if b <= a:
        return 0.0
    if alpha == 0.0 and beta == 0.0:
        val, _ = integrate.quad(func, a, b, **_QUAD_OPTS)
    else:
        val, _ = integrate.quad(func, a, b, weight="alg", wvar=(alpha, beta),
                                **_QUAD_OPTS)
    return val


class Kernel:
    """Base class.  Subclasses override ``__call__`` and the closed forms."""

    family = "kernel"
    exponent = 0.0
    completely_monotone = False
    # True when ``regular`` is analytic near 0, so Gauss-Jacobi rules with
    # weight t**exponent are spectrally accurate on the singular cell.
    smooth_regular = True

    def __call__(self, t):
        raise NotImplementedError

    @property
    def singular(self):
        return self.exponent < 0.0

    def regular(self, t):
        """Smooth factor K(t) * t**(-exponent)."""
        t = np.asarray(t, dtype=float)
        if self.exponent == 0.0:
            return self(t)
        return self(t) * t ** (-self.exponent)

    def antiderivative(self, t):
        """F(t) = int_0^t K, or None when no closed form is known."""
        return None

    def square_antiderivative(self, t):
        """int_0^t K**2, or None when no closed form is known."""
        return None

    def exp_sum(self):
        """Representation sum_k c_k exp(-beta_k t) as a list, if one exists."""
        return None

    def sup(self, T):
        """Upper bound for |K| on (0, T]."""
        raise NotImplementedError

    def integral(self, lo, hi):
        """int_lo^hi K(s) ds for 0 <= lo <= hi."""
        if hi <= lo:
            return 0.0
        F = self.antiderivative(np.array([lo, hi], dtype=float))
        if F is not None:
            return float(F[1] - F[0])
        if lo == 0.0 and self.exponent != 0.0:
            return _quad_alg(lambda s: float(self.regular(s)), 0.0, hi,
                             alpha=self.exponent)
        return _quad_alg(lambda s: float(self(s)), lo, hi)

    def square_integral(self, lo, hi):
        """int_lo^hi K(s)**2 ds for 0 <= lo <= hi."""
        if hi <= lo:
            return 0.0
        F = self.square_antiderivative(np.array([lo, hi], dtype=float))
        if F is not None:
            return float(F[1] - F[0])
        if 2 * self.exponent <= -1:
            raise ValueError("kernel is not locally square integrable")
        if lo == 0.0 and self.exponent != 0.0:
            return _quad_alg(lambda s: float(self.regular(s)) ** 2, 0.0, hi,
                             alpha=2 * self.exponent)
        return _quad_alg(lambda s: float(self(s)) ** 2, lo, hi)

    def __add__(self, other):
        return SumKernel((self, other))

    def __mul__(self, other):
        return ProductKernel((self, other))


@dataclass(frozen=True, eq=True)
class Constant(Kernel):
    c: float = 1.0
    family = "constant"

    def __post_init__(self):
        object.__setattr__(self, "completely_monotone", self.c > 0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, float(self.c)) if t.ndim else float(self.c)

    def antiderivative(self, t):
        return self.c * np.asarray(t, dtype=float)

    def square_antiderivative(self, t):
        return self.c ** 2 * np.asarray(t, dtype=float)

    def exp_sum(self):
        return [(float(self.c), 0.0)]

    def sup(self, T):
        return abs(self.c)


@dataclass(frozen=True, eq=True)
class Fractional(Kernel):
    """K(t) = t**(H - 1/2), without Gamma normalisation."""

    H: float = 0.5
    family = "fractional"

    def __post_init__(self):
        if not 0.0 < self.H < 1.0:
            raise ValueError(f"Fractional kernel needs H in (0, 1), got {self.H}")
        object.__setattr__(self, "exponent", self.H - 0.5)
        object.__setattr__(self, "completely_monotone", self.H <= 0.5)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        e = self.exponent
        if e < 0 and np.any(t <= 0):
            raise KernelDomainError(
                f"fractional kernel with H={self.H} is singular at t=0 "
                "(exponent H-1/2 < 0); evaluate at t > 0")
        if e == 0:
            out = np.ones_like(t)
        else:
            out = np.where(t > 0, np.abs(t) ** e, 0.0)
        return out if t.ndim else float(out)

    def regular(self, t):
        t = np.asarray(t, dtype=float)
        return np.ones_like(t) if t.ndim else 1.0

    def antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        q = self.H + 0.5
        return t ** q / q

    def square_antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        return t ** (2 * self.H) / (2 * self.H)

    def exp_sum(self):
        return [(1.0, 0.0)] if self.H == 0.5 else None

    def sup(self, T):
        if self.H < 0.5:
            return math.inf
        return T ** self.exponent


@dataclass(frozen=True, eq=True)
class Exponential(Kernel):
    """K(t) = exp(-beta t)."""

    beta: float = 1.0
    family = "exponential"
    completely_monotone = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"Exponential kernel needs beta > 0, got {self.beta}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.exp(-self.beta * t)
        return out if t.ndim else float(out)

    def antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        return -np.expm1(-self.beta * t) / self.beta

    def square_antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        return -np.expm1(-2 * self.beta * t) / (2 * self.beta)

    def exp_sum(self):
        return [(1.0, float(self.beta))]

    def sup(self, T):
        return 1.0


@dataclass(frozen=True, eq=True)
class SumKernel(Kernel):
    members: tuple = ()
    family = "sum"

    def __post_init__(self):
        if not self.members:
            raise ValueError("Sum kernel needs at least one member")
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "exponent",
                           min(m.exponent for m in self.members))
        object.__setattr__(self, "completely_monotone",
                           all(m.completely_monotone for m in self.members))
        exps = {m.exponent for m in self.members}
        object.__setattr__(self, "smooth_regular",
                           len(exps) == 1 and all(m.smooth_regular for m in self.members))

    def __call__(self, t):
        return sum(m(t) for m in self.members)

    def regular(self, t):
        t = np.asarray(t, dtype=float)
        out = 0.0
        for m in self.members:
            shift = m.exponent - self.exponent
            out = out + m.regular(t) * (t ** shift if shift else 1.0)
        return out

    def antiderivative(self, t):
        parts = [m.antiderivative(t) for m in self.members]
        if any(p is None for p in parts):
            return None
        return sum(parts)

    def integral(self, lo, hi):
        return sum(m.integral(lo, hi) for m in self.members)

    def exp_sum(self):
        parts = [m.exp_sum() for m in self.members]
        if any(p is None for p in parts):
            return None
        return [term for p in parts for term in p]

    def sup(self, T):
        return sum(m.sup(T) for m in self.members)


@dataclass(frozen=True, eq=True)
class ProductKernel(Kernel):
    members: tuple = ()
    family = "product"

    def __post_init__(self):
        if not self.members:
            raise ValueError("Product kernel needs at least one member")
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "exponent",
                           sum(m.exponent for m in self.members))
        object.__setattr__(self, "completely_monotone",
                           all(m.completely_monotone for m in self.members))
        object.__setattr__(self, "smooth_regular",
                           all(m.smooth_regular for m in self.members))

    def __call__(self, t):
        out = 1.0
        for m in self.members:
            out = out * m(t)
        return out

    def regular(self, t):
        out = 1.0
        for m in self.members:
            out = out * m.regular(t)
        return out

    def _gamma_form(self):
        # scale * t**e * exp(-beta t) when every member is constant,
        # exponential or fractional
        scale, e, beta = 1.0, 0.0, 0.0
        for m in self.members:
            if isinstance(m, Constant):
                scale *= m.c
            elif isinstance(m, Exponential):
                beta += m.beta
            elif isinstance(m, Fractional):
                e += m.exponent
            else:
                return None
        return scale, e, beta

    def antiderivative(self, t):
        form = self._gamma_form()
        if form is None:
            return None
        scale, e, beta = form
        t = np.asarray(t, dtype=float)
        q = e + 1.0
        if beta == 0.0:
            return scale * t ** q / q
        return scale * special.gammainc(q, beta * t) * special.gamma(q) / beta ** q

    def square_antiderivative(self, t):
        form = self._gamma_form()
        if form is None:
            return None
        scale, e, beta = form
        t = np.asarray(t, dtype=float)
        q = 2 * e + 1.0
        if beta == 0.0:
            return scale ** 2 * t ** q / q
        b2 = 2 * beta
        return scale ** 2 * special.gammainc(q, b2 * t) * special.gamma(q) / b2 ** q

    def exp_sum(self):
        out = [(1.0, 0.0)]
        for m in self.members:
            terms = m.exp_sum()
            if terms is None:
                return None
            out = [(c1 * c2, b1 + b2) for c1, b1 in out for c2, b2 in terms]
        return out

    def sup(self, T):
        out = 1.0
        for m in self.members:
            out *= m.sup(T)
        return out


@dataclass(frozen=True, eq=False)
class Tabulated(Kernel):
    """Kernel sampled on a grid and interpolated by monotone cubics.

    Beyond the last node the kernel is continued by its last value.
    """

    times: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    values: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))
    family = "tabulated"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 2:
            raise ValueError("tabulated kernel needs matching 1-d times/values")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("tabulated times must start at 0 and increase")
        if not np.all(np.isfinite(v)):
            raise ValueError("tabulated values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "_interp", PchipInterpolator(t, v, extrapolate=False))
        object.__setattr__(self, "_anti", self._interp.antiderivative())
        dec = np.all(np.diff(v) <= 0) and np.all(v >= 0) and v[0] > 0
        object.__setattr__(self, "completely_monotone", bool(dec))
        object.__setattr__(self, "smooth_regular", False)

    @classmethod
    def shifted_fractional(cls, H, shift, T, n=400):
        """Tabulate (t + shift)**(H - 1/2) on a grid refined towards 0."""
        if shift <= 0:
            raise ValueError("shift must be positive")
        u = np.linspace(0.0, 1.0, n + 1)
        t = T * u ** 2
        return cls(t, (t + shift) ** (H - 0.5))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.times[-1])
        out = self._interp(tc)
        return out if t.ndim else float(out)

    def antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, self.times[-1])
        return self._anti(tc) + np.maximum(t - self.times[-1], 0.0) * self.values[-1]

    def square_integral(self, lo, hi):
        if hi <= lo:
            return 0.0
        knots = self.times[(self.times > lo) & (self.times < hi)]
        edges = np.concatenate(([lo], knots, [hi]))
        x, w = np.polynomial.legendre.leggauss(8)
        a, b = edges[:-1, None], edges[1:, None]
        s = 0.5 * (b - a) * x + 0.5 * (a + b)
        return float(np.sum(0.5 * (b - a) * w * self(s) ** 2))

    def sup(self, T):
        mask = self.times <= T
        vals = self.values[mask]
        return float(max(np.max(np.abs(vals)), abs(float(self(T)))))


# ---------------------------------------------------------------------------
# operations


def eval_kernel(kernel, t):
    """Return K(t)."""
    return kernel(t)


def integrate_kernel_cell(kernel, T, a, b):
    """Return int_a^b K(T - r) dr for 0 <= a <= b <= T."""
    if not 0.0 <= a <= b <= T * (1 + 1e-14):
        raise ValueError(f"need 0 <= a <= b <= T, got a={a}, b={b}, T={T}")
    return kernel.integral(max(T - b, 0.0), T - a)


def integrate_kernel_pair(k1, k2, T1, T2, a, b):
    """Return int_a^b K1(T1 - r) K2(T2 - r) dr for 0 <= a <= b <= min(T1, T2)."""
    if not 0.0 <= a <= b <= min(T1, T2) * (1 + 1e-14):
        raise ValueError("need 0 <= a <= b <= min(T1, T2)")
    if b <= a:
        return 0.0
    if isinstance(k2, Constant):
        return k2.c * integrate_kernel_cell(k1, T1, a, b)
    if isinstance(k1, Constant):
        return k1.c * integrate_kernel_cell(k2, T2, a, b)
    if T1 == T2:
        q = k1.exponent + k2.exponent + 1.0
        if q <= 0 and b >= T1:
            raise ValueError("product of kernels is not integrable at the "
                             "coincident singularity (exponent sum <= -1)")
        if isinstance(k1, Fractional) and isinstance(k2, Fractional):
            lo, hi = T1 - b, T1 - a
            return (hi ** q - lo ** q) / q
        if k1 == k2:
            return k1.square_integral(T1 - b, T1 - a)
    if isinstance(k1, Exponential) and isinstance(k2, Exponential):
        beta = k1.beta + k2.beta
        return math.exp(-k1.beta * T1 - k2.beta * T2) * (
            math.exp(beta * b) - math.exp(beta * a)) / beta
    # general case in s = b - r, singularities sit at s = T_i - b
    d1, d2 = T1 - b, T2 - b
    e1 = k1.exponent if d1 == 0.0 else 0.0
    e2 = k2.exponent if d2 == 0.0 else 0.0
    if e1 + e2 <= -1:
        raise ValueError("product of kernels is not integrable at the "
                         "coincident singularity (exponent sum <= -1)")
    length = b - a

    def f(s):
        v1 = k1.regular(s) if e1 != 0.0 else k1(d1 + s)
        v2 = k2.regular(s) if e2 != 0.0 else k2(d2 + s)
        return float(v1 * v2)

    return _quad_alg(f, 0.0, length, alpha=e1 + e2)


@dataclass(frozen=True)
class GammaEstimate:
    gamma: float
    residual: float
    poor_fit: bool


def estimate_gamma(kernel, T=1.0, j_range=(4, 15)):
    """Slope of log int_0^h K**2 against log h on dyadic h = T 2**-j."""
    j = np.arange(j_range[0], j_range[1] + 1)
    h = T * 2.0 ** (-j)
    y = np.array([kernel.square_integral(0.0, hh) for hh in h])
    if np.any(y <= 0):
        return GammaEstimate(float("nan"), float("inf"), True)
    X = np.vstack([np.log(h), np.ones_like(h)]).T
    coef, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
    resid = float(np.max(np.abs(X @ coef - np.log(y))))
    return GammaEstimate(float(coef[0]), resid, resid > 0.05)


def is_jump_dual_eligible(kernel, T=1.0):
    """Return (eligible, reason).

    A kernel qualifies when it is bounded on [0, T] with a derivative that is
    square integrable against the weight (1 + x)**2.  Constants, exponentials
    and tabulated (interpolated, hence C1) kernels qualify; sums and products
    qualify when all members do.  A fractional kernel qualifies only for
    H = 1/2, where it is identically one.
    """
    if isinstance(kernel, (Constant, Exponential)):
        return True, f"{kernel.family} kernel is smooth and bounded"
    if isinstance(kernel, Fractional):
        if kernel.H == 0.5:
            return True, "fractional kernel with H=1/2 is identically 1"
        if kernel.H < 0.5:
            return False, f"fractional kernel with H={kernel.H} is unbounded at 0"
        return False, (f"fractional kernel with H={kernel.H} has derivative "
                       f"~ t^{kernel.H - 1.5:.2f}, not square integrable at 0")
    if isinstance(kernel, Tabulated):
        if not np.isfinite(kernel.sup(T)):
            return False, "tabulated kernel has non-finite values"
        return True, "tabulated kernel is a bounded C1 interpolant"
    if isinstance(kernel, (SumKernel, ProductKernel)):
        for m in kernel.members:
            ok, why = is_jump_dual_eligible(m, T)
            if not ok:
                return False, f"member not eligible: {why}"
        return True, f"all {kernel.family} members eligible"
    return False, f"unknown kernel family {kernel.family!r}"


# ---------------------------------------------------------------------------
# lag tables on a uniform grid


def lag_weights(kernel, dt, M):
    """W[L] = int_{(L-1)dt}^{L dt} K for L = 1..M (W[0] = 0)."""
    W = np.zeros(M + 1)
    edges = dt * np.arange(M + 1)
    F = kernel.antiderivative(edges)
    if F is not None:
        W[1:] = np.diff(F)
    else:
        for L in range(1, M + 1):
            W[L] = kernel.integral(edges[L - 1], edges[L])
    return W


def _gauss_jacobi(n, beta):
    """Nodes/weights on [0, 1] for the weight s**beta."""
    x, w = special.roots_jacobi(n, 0.0, beta)
    s = 0.5 * (x + 1.0)
    return s, w * 0.5 ** (beta + 1.0)


def pair_lag_table(kernel, dt, M, moment=0, nodes=24):
    """P[L1, L2] = int_0^dt K(L1 dt - u) K(L2 dt - u) (u/dt)**moment du.

    Rows and columns are lags 0..M; lag 0 entries are zero.  The singular
    lag-1 cells are integrated with Gauss-Jacobi rules carrying the kernel's
    power behaviour, the remaining cells with Gauss-Legendre.
    """
    P = np.zeros((M + 1, M + 1))
    if M == 0:
        return P
    if isinstance(kernel, Constant):
        P[1:, 1:] = kernel.c ** 2 * dt / (moment + 1)
        return P
    if isinstance(kernel, Exponential):
        b = kernel.beta
        L = np.arange(1, M + 1)
        # u-integral of exp(2 b u) (u/dt)^moment on [0, dt]
        x = 2 * b * dt
        if moment == 0:
            base = dt * np.expm1(x) / x
        else:
            base = dt * (np.exp(x) * (x - 1) + 1) / x ** 2
        P[1:, 1:] = np.exp(-b * dt * (L[:, None] + L[None, :])) * base
        return P
    e = kernel.exponent
    # substitute s = dt - u; (u/dt)^moment = (1 - s/dt)^moment
    if e == 0.0:
        xg, wg = np.polynomial.legendre.leggauss(nodes)
        sg = 0.5 * (xg + 1.0)
        wg = 0.5 * wg * (1 - sg) ** moment
        Kv = kernel(np.arange(M)[:, None] * dt + dt * sg[None, :])
        P[1:, 1:] = dt * ((Kv * wg[None, :]) @ Kv.T)
        return P
    if not kernel.smooth_regular:
        for L1 in range(1, M + 1):
            for L2 in range(L1, M + 1):
                def f(s, L1=L1, L2=L2):
                    v1 = kernel.regular(s) if L1 == 1 else kernel((L1 - 1) * dt + s)
                    v2 = kernel.regular(s) if L2 == 1 else kernel((L2 - 1) * dt + s)
                    return float(v1 * v2 * (1 - s / dt) ** moment)
                alpha = (e if L1 == 1 else 0.0) + (e if L2 == 1 else 0.0)
                P[L1, L2] = P[L2, L1] = _quad_alg(f, 0.0, dt, alpha=alpha)
        return P
    # (1, 1): weight s^(2e)
    sj, wj = _gauss_jacobi(nodes, 2 * e)
    s = dt * sj
    P[1, 1] = dt ** (2 * e + 1) * np.sum(wj * kernel.regular(s) ** 2 * (1 - sj) ** moment)
    if M >= 2:
        # (1, L2) with L2 >= 2: weight s^e
        sj, wj = _gauss_jacobi(nodes, e)
        s = dt * sj
        L2 = np.arange(2, M + 1)
        vals = kernel.regular(s)[None, :] * kernel((L2[:, None] - 1) * dt + s[None, :])
        row = dt ** (e + 1) * np.sum(wj * (1 - sj) ** moment * vals, axis=1)
        P[1, 2:] = row
        P[2:, 1] = row
        # both lags >= 2
        xg, wg = np.polynomial.legendre.leggauss(nodes // 2 + 4)
        sg = 0.5 * (xg + 1.0)
        wg = 0.5 * wg * (1 - sg) ** moment
        Kv = kernel((np.arange(1, M)[:, None]) * dt + dt * sg[None, :])  # lags 2..M
        Kw = Kv * wg[None, :]
        P[2:, 2:] = dt * (Kw @ Kv.T)
    return P


def square_lag_weights(kernel, dt, M):
    """S[L] = int_{(L-1)dt}^{L dt} K**2 for L = 1..M."""
    S = np.zeros(M + 1)
    edges = dt * np.arange(M + 1)
    F = kernel.square_antiderivative(edges)
    if F is not None:
        S[1:] = np.diff(F)
    else:
        for L in range(1, M + 1):
            S[L] = kernel.square_integral(edges[L - 1], edges[L])
    return S


def kernel_from_config(block, T=None):
    """Build a kernel from a config mapping (keys family, c, H, beta, ...)."""
    fam = str(block.get("family", "constant")).lower()
    if fam == "constant":
        return Constant(float(block.get("c", 1.0)))
    if fam == "fractional":
        return Fractional(float(block["H"]))
    if fam == "exponential":
        return Exponential(float(block["beta"]))
    if fam in ("sum", "product"):
        members = [kernel_from_config(m, T) for m in block.get("members", [])]
        return SumKernel(tuple(members)) if fam == "sum" else ProductKernel(tuple(members))
    if fam == "tabulated":
        if "times" in block:
            return Tabulated(np.asarray(block["times"], float),
                             np.asarray(block["values"], float))
        horizon = float(block.get("T", T if T is not None else 1.0))
        return Tabulated.shifted_fractional(float(block["H"]), float(block["shift"]),
                                            horizon, int(block.get("n", 400)))
    raise ValueError(f"unknown kernel family {fam!r}")


def kernel_to_config(kernel):
    if isinstance(kernel, Constant):
        return {"family": "constant", "c": kernel.c}
    if isinstance(kernel, Fractional):
        return {"family": "fractional", "H": kernel.H}
    if isinstance(kernel, Exponential):
        return {"family": "exponential", "beta": kernel.beta}
    if isinstance(kernel, (SumKernel, ProductKernel)):
        return {"family": kernel.family,
                "members": [kernel_to_config(m) for m in kernel.members]}
    if isinstance(kernel, Tabulated):
        return {"family": "tabulated", "times": kernel.times.tolist(),
                "values": kernel.values.tolist()}
    raise ValueError(f"cannot serialise kernel {kernel!r}")
