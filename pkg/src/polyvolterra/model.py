"""Polynomial Volterra model: coefficients, state spaces, index combinatorics.

Coefficients follow b(x) = b0 + B x, where column i of B is b_i, and
a(x) = A0 + sum_i A_i x_i + sum_{i,j} A_ij x_i x_j.  Arrays are stored as
``A1[i] = A_i`` and ``A2[i, j] = A_ij``.  Words and letters are 1-based in the
public helpers, 0-based internally.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc


# ---------------------------------------------------------------------------
# state spaces


@dataclass(frozen=True)
class FreeSpace:
    name = "free"

    def contains(self, x, tol=0.0):
        return np.ones(np.shape(x)[:-1], dtype=bool)

    def project(self, x):
        """Return (projected x, excursion >= 0, mask of modified states)."""
        x = np.asarray(x, dtype=float)
        zero = np.zeros(x.shape[:-1])
        return x, zero, zero.astype(bool)


@dataclass(frozen=True)
class UnitBall:
    c: float = 0.0
    name = "ball"

    def contains(self, x, tol=0.0):
        return np.sum(np.asarray(x) ** 2, axis=-1) <= (1.0 + tol) ** 2

    def project(self, x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x * x, axis=-1))
        out = r > 1.0
        exc = np.where(out, r - 1.0, 0.0)
        if np.any(out):
            x = x.copy()
            x[out] = x[out] / r[out][..., None]
            # guard against rounding just above the sphere, in the same
            # sum-of-squares test that contains() uses
            idx = np.flatnonzero(out)
            while idx.size:
                idx = idx[np.sum(x[idx] ** 2, axis=-1) > 1.0]
                x[idx] *= 1.0 - 2.0 ** -52
        return x, exc, out


@dataclass(frozen=True)
class JacobiInterval:
    alpha1: float = 0.0
    alpha2: float = 1.0
    lam: float = 0.0
    b: float = 0.5
    c: float = 1.0
    name = "jacobi"

    def contains(self, x, tol=0.0):
        x = np.asarray(x)[..., 0]
        return (x >= self.alpha1 - tol) & (x <= self.alpha2 + tol)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        y = np.clip(x, self.alpha1, self.alpha2)
        exc = np.abs(x - y)[..., 0]
        return y, exc, exc > 0


# ---------------------------------------------------------------------------
# model


def _as_matrix(v, d, name):
    a = np.asarray(v, dtype=float)
    if a.size == d * d:
        return a.reshape(d, d)
    raise ValueError(f"{name} must have {d * d} entries, got shape {a.shape}")


@dataclass(frozen=True, eq=False)
class PolyModel:
    d: int
    b0: np.ndarray
    B: np.ndarray
    A0: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    state_space: object = field(default_factory=FreeSpace)
    x0: np.ndarray = None
    g0_times: np.ndarray = None
    g0_values: np.ndarray = None

    def __post_init__(self):
        d = int(self.d)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "b0", np.asarray(self.b0, float).reshape(d))
        object.__setattr__(self, "B", _as_matrix(self.B, d, "B"))
        object.__setattr__(self, "A0", _as_matrix(self.A0, d, "A0"))
        object.__setattr__(self, "A1", np.asarray(self.A1, float).reshape(d, d, d))
        object.__setattr__(self, "A2", np.asarray(self.A2, float).reshape(d, d, d, d))
        if self.g0_times is not None:
            t = np.asarray(self.g0_times, float)
            v = np.asarray(self.g0_values, float).reshape(len(t), d)
            if np.any(np.diff(t) <= 0):
                raise ValueError("g0 table times must increase")
            object.__setattr__(self, "g0_times", t)
            object.__setattr__(self, "g0_values", v)
        else:
            x0 = np.zeros(d) if self.x0 is None else self.x0
            object.__setattr__(self, "x0", np.asarray(x0, float).reshape(d))

    # construction helpers -------------------------------------------------

    @classmethod
    def from_coefficients(cls, b0=None, B=None, A0=None, A1=None, A2=None, d=None,
                          x0=None, **kw):
        if d is None:
            ref = x0 if x0 is not None else b0
            d = 1 if ref is None else np.atleast_1d(ref).size
        z = np.zeros
        return cls(d,
                   z(d) if b0 is None else b0,
                   z((d, d)) if B is None else B,
                   z((d, d)) if A0 is None else A0,
                   z((d, d, d)) if A1 is None else A1,
                   z((d, d, d, d)) if A2 is None else A2,
                   x0=x0, **kw)

    @classmethod
    def scalar(cls, b0=0.0, b1=0.0, A0=0.0, A1=0.0, A11=0.0, x0=1.0, **kw):
        """One-dimensional model with drift b0 + b1 x and a(x) = A0 + A1 x + A11 x^2."""
        return cls(1, [b0], [[b1]], [[A0]], [[[A1]]], [[[[A11]]]], x0=[x0], **kw)

    @classmethod
    def unit_ball(cls, b0, B, c, x0):
        """sigma(x) = c sqrt(1 - x'x) I, so a(x) = c^2 (1 - |x|^2) I."""
        b0 = np.atleast_1d(np.asarray(b0, float))
        d = b0.size
        A2 = np.zeros((d, d, d, d))
        for i in range(d):
            A2[i, i] = -c * c * np.eye(d)
        return cls(d, b0, B, c * c * np.eye(d), np.zeros((d, d, d)), A2,
                   state_space=UnitBall(float(c)), x0=x0)

    @classmethod
    def jacobi(cls, alpha1, alpha2, lam, b, c, y0):
        """Drift lam (b - y), diffusion c^2 (y - alpha1)(alpha2 - y) on [alpha1, alpha2]."""
        if not alpha1 <= b <= alpha2:
            raise ValueError("need alpha1 <= b <= alpha2")
        if lam < 0 or c < 0:
            raise ValueError("need lam >= 0 and c >= 0")
        if not alpha1 <= y0 <= alpha2:
            raise ValueError("initial value outside the interval")
        c2 = c * c
        return cls.scalar(b0=lam * b, b1=-lam, A0=-c2 * alpha1 * alpha2,
                          A1=c2 * (alpha1 + alpha2), A11=-c2, x0=y0,
                          state_space=JacobiInterval(alpha1, alpha2, lam, b, c))

    def replace(self, **kw):
        base = dict(d=self.d, b0=self.b0, B=self.B, A0=self.A0, A1=self.A1, A2=self.A2,
                    state_space=self.state_space, x0=self.x0,
                    g0_times=self.g0_times, g0_values=self.g0_values)
        base.update(kw)
        if "x0" in kw and "g0_times" not in kw:
            base["g0_times"] = base["g0_values"] = None
        return PolyModel(**base)

    # evaluation -------------------------------------------------------------

    @property
    def constant_g0(self):
        return self.g0_times is None

    @property
    def is_affine(self):
        return not np.any(self.A2)

    def g0(self, t):
        """Initial curve at times t, shape t.shape + (d,)."""
        t = np.asarray(t, dtype=float)
        if self.constant_g0:
            return np.broadcast_to(self.x0, t.shape + (self.d,)).copy()
        out = np.empty(t.shape + (self.d,))
        for i in range(self.d):
            out[..., i] = np.interp(t, self.g0_times, self.g0_values[:, i])
        return out

    def b(self, x):
        x = np.asarray(x, dtype=float)
        return self.b0 + x @ self.B.T

    def a(self, x):
        x = np.asarray(x, dtype=float)
        return (self.A0 + np.einsum("...i,ijk->...jk", x, self.A1)
                + np.einsum("...i,...j,ijkl->...kl", x, x, self.A2))

    def sigma(self, x):
        """Volatility matrix; returns (sigma, most negative clipped eigenvalue)."""
        x = np.asarray(x, dtype=float)
        ss = self.state_space
        if isinstance(ss, UnitBall):
            r2 = np.sum(x * x, axis=-1)
            s = ss.c * np.sqrt(np.maximum(0.0, 1.0 - r2))
            return s[..., None, None] * np.eye(self.d), np.zeros(x.shape[:-1])
        if isinstance(ss, JacobiInterval):
            y = x[..., 0]
            s = ss.c * np.sqrt(np.maximum(0.0, (y - ss.alpha1) * (ss.alpha2 - y)))
            return s[..., None, None], np.zeros(x.shape[:-1])
        return psd_sqrt(self.a(x))


def psd_sqrt(a):
    """Symmetric square root with negative eigenvalues clipped at zero.

    Returns (root, min(0, smallest eigenvalue)).
    """
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 1:
        v = a[..., 0, 0]
        return np.sqrt(np.maximum(v, 0.0))[..., None, None], np.minimum(v, 0.0)
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    w, V = np.linalg.eigh(sym)
    root = (V * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(V, -1, -2)
    return root, np.minimum(w[..., 0], 0.0)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    ok: bool
    failures: list
    warnings: list
    symmetry_residual: float
    min_eigenvalue: float
    min_eigenvalue_at: np.ndarray
    growth_constant: float
    n_samples: int

    def summary(self):
        lines = [f"status: {'PASS' if self.ok else 'FAIL'}",
                 f"symmetry residual: {self.symmetry_residual:.3e}",
                 f"min eigenvalue of a(x): {self.min_eigenvalue:.6e} at "
                 f"{np.array2string(np.asarray(self.min_eigenvalue_at), precision=4)}",
                 f"linear growth constant: {self.growth_constant:.4g}"]
        lines += [f"failure: {m}" for m in self.failures]
        lines += [f"warning: {m}" for m in self.warnings]
        return "\n".join(lines)


def _domain_samples(model, n, rng):
    d, ss = model.d, model.state_space
    if isinstance(ss, UnitBall):
        z = rng.standard_normal((n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = rng.random(n) ** (1.0 / d)
        pts = z * r[:, None]
        return np.vstack([pts, z, np.zeros((1, d))])
    if isinstance(ss, JacobiInterval):
        pts = rng.uniform(ss.alpha1, ss.alpha2, (n, 1))
        return np.vstack([pts, [[ss.alpha1]], [[ss.alpha2]]])
    scale = max(1.0, float(np.max(np.abs(model.g0(np.array([0.0]))))))
    return rng.uniform(-2 * scale, 2 * scale, (n, d))


def validate_model(model, sample_count=2000, seed=0, tol=-1e-10):
    """Check symmetry and positivity of a(x) and estimate the growth constant.

    In free space a(x) need only be positive semidefinite where the process
    lives, which is not known in advance; negative eigenvalues on the sample
    box are reported as warnings, and only an indefinite a at the initial
    states is a failure.  On the ball and the Jacobi interval positivity is
    required on the whole domain.
    """
    rng = np.random.default_rng(seed)
    failures, warnings = [], []
    d = model.d
    for name, arr in (("B", model.B), ("A0", model.A0), ("A1", model.A1), ("A2", model.A2)):
        if not np.all(np.isfinite(arr)):
            failures.append(f"{name} has non-finite entries")
    x = _domain_samples(model, sample_count, rng)
    a = model.a(x)
    sym = float(np.max(np.abs(a - np.swapaxes(a, -1, -2)))) if len(x) else 0.0
    if sym > 1e-12 * max(1.0, float(np.max(np.abs(a)))):
        failures.append(f"a(x) not symmetric, residual {sym:.3e}")
    lam = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, -1, -2)))[:, 0]
    k = int(np.argmin(lam))
    min_eig, min_at = float(lam[k]), x[k]

    if model.constant_g0:
        starts = model.x0[None, :]
    else:
        starts = model.g0_values
    lam0 = np.linalg.eigvalsh(model.a(starts))[:, 0]
    if np.min(lam0) < tol:
        j = int(np.argmin(lam0))
        failures.append(f"a(x) indefinite at initial state {starts[j]}: "
                        f"eigenvalue {lam0[j]:.6e}")
        if lam0[j] < min_eig:
            min_eig, min_at = float(lam0[j]), starts[j]
    if min_eig < tol:
        msg = f"a(x) has eigenvalue {min_eig:.6e} at sampled x={np.round(min_at, 6)}"
        if isinstance(model.state_space, FreeSpace):
            warnings.append(msg + " (outside the region visited by the process?)")
        else:
            failures.append(msg + " inside the state space")
    if not model.state_space.contains(starts, tol=1e-12).all():
        failures.append("initial state outside the state space")
    if isinstance(model.state_space, UnitBall):
        chk = check_ball_drift_condition(model.b0, model.B)
        if not chk.passed:
            failures.append(f"ball drift condition fails at x={chk.witness}, "
                            f"value {chk.value:.4g}")

    sig, _ = model.sigma(x)
    bn = np.linalg.norm(model.b(x), axis=-1)
    sn = np.linalg.norm(sig.reshape(len(x), -1), axis=-1)
    growth = float(np.max(np.maximum(bn, sn) / (1 + np.linalg.norm(x, axis=-1))))
    return ValidationReport(not failures, failures, warnings, sym, min_eig,
                            np.asarray(min_at), growth, len(x))


@dataclass(frozen=True)
class DriftCheck:
    passed: bool
    method: str
    witness: np.ndarray = None
    value: float = float("nan")


def check_ball_drift_condition(b0, B, n_samples=10_000, seed=0):
    """Test x'(b0 + B x) <= 0 on the unit sphere."""
    b0 = np.atleast_1d(np.asarray(b0, float))
    d = b0.size
    B = np.asarray(B, float).reshape(d, d)
    S = 0.5 * (B + B.T)
    lmax = float(np.linalg.eigvalsh(S)[-1])
    if np.linalg.norm(b0) + lmax <= 0:
        return DriftCheck(True, "eigenvalue bound")

    def value(x):
        return x @ b0 + np.einsum("...i,ij,...j->...", x, B, x)

    if d == 1:
        pts = np.array([[1.0], [-1.0]])
    else:
        # Sobol points mapped to normals then to the sphere, plus directions
        # suggested by b0 and the eigenvectors of the symmetric part of B
        m = int(np.ceil(np.log2(max(n_samples, 2))))
        u = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:n_samples]
        from scipy.special import ndtri
        z = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
        _, V = np.linalg.eigh(S)
        cand = [z, V.T, -V.T]
        if np.linalg.norm(b0) > 0:
            cand.append(b0[None, :])
        z = np.vstack(cand)
        pts = z / np.linalg.norm(z, axis=1, keepdims=True)
    vals = value(pts)
    k = int(np.argmax(vals))
    x, v = pts[k], float(vals[k])
    if d > 1:
        # projected gradient ascent on the sphere to sharpen the witness
        for _ in range(200):
            g = b0 + (B + B.T) @ x
            g = g - (g @ x) * x
            xn = x + 0.1 * g
            xn /= np.linalg.norm(xn)
            vn = float(value(xn))
            if vn <= v + 1e-15:
                break
            x, v = xn, vn
    if v > 0:
        return DriftCheck(False, "sphere sampling", x, v)
    return DriftCheck(True, "sphere sampling", x, v)


# ---------------------------------------------------------------------------
# words and multi-indices


def multi_index_of_word(w, d):
    """alpha(w) with alpha_k = #{n : w_n = k}, letters 1..d."""
    alpha = [0] * d
    for letter in w:
        if not 1 <= letter <= d:
            raise ValueError(f"letter {letter} outside 1..{d}")
        alpha[letter - 1] += 1
    return tuple(alpha)


def word_of_multi_index(alpha):
    """Sorted word with the given multi-index (1-based letters)."""
    return tuple(k + 1 for k, a in enumerate(alpha) for _ in range(a))


@dataclass(frozen=True)
class IndexSet:
    N: int
    d: int
    words: tuple

    @property
    def size(self):
        return len(self.words)

    def pi(self, p, w):
        w = tuple(w)
        if len(w) != p:
            raise ValueError("word length must equal the level")
        return self._lookup[w]

    def inverse(self, k):
        w = self.words[k]
        return len(w), w

    @property
    def _lookup(self):
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {w: k for k, w in enumerate(self.words)}
            object.__setattr__(self, "_cache", cache)
        return cache


def enumerate_index_set(N, d):
    """Index set I^(N) ordered by level, then lexicographically by word."""
    if N < 0 or d < 1:
        raise ValueError("need N >= 0 and d >= 1")
    words = tuple(w for p in range(N + 1)
                  for w in itertools.product(range(1, d + 1), repeat=p))
    return IndexSet(N, d, words)


def index_set_size(N, d):
    return N + 1 if d == 1 else (d ** (N + 1) - 1) // (d - 1)


def multi_indices(N, d):
    """All alpha with |alpha| <= N, by degree then reverse lexicographic."""
    out = []
    for p in range(N + 1):
        for w in itertools.combinations_with_replacement(range(d), p):
            alpha = [0] * d
            for i in w:
                alpha[i] += 1
            out.append(tuple(alpha))
    return out


# ---------------------------------------------------------------------------
# config


def model_from_config(block):
    """Build a model from the ``model`` block of an experiment config."""
    d = int(block.get("d", 1))
    ss = str(block.get("state_space", "free")).lower()
    if ss == "jacobi":
        j = block.get("jacobi", block)
        return PolyModel.jacobi(float(j.get("alpha1", 0.0)), float(j.get("alpha2", 1.0)),
                                float(j["lambda"]), float(j["b"]), float(j["c"]),
                                float(np.atleast_1d(block.get("x0", j.get("y0")))[0]))
    b0 = np.asarray(block.get("b0", np.zeros(d)), float)
    B = np.asarray(block.get("B", np.zeros(d * d)), float).reshape(d, d)
    x0 = block.get("x0")
    if ss == "ball":
        return PolyModel.unit_ball(b0, B, float(block.get("c", 0.0)),
                                   np.zeros(d) if x0 is None else x0)
    if ss != "free":
        raise ValueError(f"unknown state space {ss!r}")
    A0 = np.asarray(block.get("A0", np.zeros(d * d)), float).reshape(d, d)
    A1 = np.zeros((d, d, d))
    for i, mat in enumerate(block.get("Ai", [])):
        A1[i] = np.asarray(mat, float).reshape(d, d)
    A2 = np.zeros((d, d, d, d))
    for entry in block.get("Aij", []):
        i, j = int(entry["i"]) - 1, int(entry["j"]) - 1
        A2[i, j] = np.asarray(entry["A"], float).reshape(d, d)
    kw = {}
    if "g0_table" in block:
        tab = block["g0_table"]
        kw = dict(g0_times=tab["times"], g0_values=tab["values"])
    elif x0 is None:
        raise ValueError("model needs x0 or g0_table")
    else:
        kw = dict(x0=x0)
    return PolyModel(d, b0, B, A0, A1, A2, **kw)


def model_to_config(model):
    d = model.d
    ss = model.state_space
    if isinstance(ss, JacobiInterval):
        return {"d": 1, "state_space": "jacobi", "x0": model.x0.tolist(),
                "jacobi": {"alpha1": ss.alpha1, "alpha2": ss.alpha2,
                           "lambda": ss.lam, "b": ss.b, "c": ss.c}}
    out = {"d": d, "b0": model.b0.tolist(), "B": model.B.reshape(-1).tolist()}
    if isinstance(ss, UnitBall):
        out.update(state_space="ball", c=ss.c, x0=model.x0.tolist())
        return out
    out.update(state_space="free", A0=model.A0.reshape(-1).tolist(),
               Ai=[model.A1[i].reshape(-1).tolist() for i in range(d)],
               Aij=[{"i": i + 1, "j": j + 1, "A": model.A2[i, j].reshape(-1).tolist()}
                    for i in range(d) for j in range(d) if np.any(model.A2[i, j])])
    if model.constant_g0:
        out["x0"] = model.x0.tolist()
    else:
        out["g0_table"] = {"times": model.g0_times.tolist(),
                           "values": model.g0_values.tolist()}
    return out
