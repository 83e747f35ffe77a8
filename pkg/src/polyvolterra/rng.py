"""Counter-based random numbers (Philox4x32-10) for reproducible streams.

A draw is a pure function of (key, counter), so path p, time step j and
coordinate i always receive the same normals regardless of batching or
thread layout.
"""

import numpy as np
from numba import njit

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)


@njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds; all arguments and outputs are uint32."""
    c0 = np.uint32(c0)
    c1 = np.uint32(c1)
    c2 = np.uint32(c2)
    c3 = np.uint32(c3)
    k0 = np.uint32(k0)
    k1 = np.uint32(k1)
    for _ in range(10):
        p0 = np.uint64(c0) * _M0
        p1 = np.uint64(c2) * _M1
        hi0 = np.uint32(p0 >> np.uint64(32))
        lo0 = np.uint32(p0 & _MASK)
        hi1 = np.uint32(p1 >> np.uint64(32))
        lo1 = np.uint32(p1 & _MASK)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@njit(cache=True)
def _u53(a, b):
    # uniform on (0, 1) from 53 random bits
    x = (np.uint64(a) << np.uint64(21)) ^ (np.uint64(b) >> np.uint64(11))
    x = x & np.uint64((1 << 53) - 1)
    return (np.float64(x) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _box_muller(u1, u2):
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


def _key(seed, stream):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    k0 = seed & 0xFFFFFFFF
    k1 = (seed >> 32) ^ ((int(stream) * 0x9E3779B9) & 0xFFFFFFFF)
    return np.uint32(k0), np.uint32(k1 & 0xFFFFFFFF)


@njit(cache=True)
def _normals(out, first_row, n_cols, k0, k1, ctr2):
    # out[r, c] for rows first_row.., columns 0..n_cols-1: one Philox call
    # yields two normals, counters are (row, col // 2, ctr2, 0)
    rows = out.shape[0]
    for r in range(rows):
        row = np.uint32(first_row + r)
        for c in range(0, n_cols, 2):
            x0, x1, x2, x3 = philox4x32(row, np.uint32(c // 2), ctr2, np.uint32(0), k0, k1)
            z0, z1 = _box_muller(_u53(x0, x1), _u53(x2, x3))
            out[r, c] = z0
            if c + 1 < n_cols:
                out[r, c + 1] = z1


@njit(cache=True)
def _uniforms(out, first_row, n_cols, k0, k1, ctr2):
    rows = out.shape[0]
    for r in range(rows):
        row = np.uint32(first_row + r)
        for c in range(0, n_cols, 2):
            x0, x1, x2, x3 = philox4x32(row, np.uint32(c // 2), ctr2, np.uint32(1), k0, k1)
            out[r, c] = _u53(x0, x1)
            if c + 1 < n_cols:
                out[r, c + 1] = _u53(x2, x3)


def normals(seed, stream, rows, n_cols, block=0):
    """Standard normals for path indices in ``rows`` (a range), shape (len, n_cols).

    ``stream`` separates uses of one seed; ``block`` is a third counter word
    for callers that need more than 2**33 draws per path.
    """
    k0, k1 = _key(seed, stream)
    out = np.empty((len(rows), n_cols))
    _normals(out, rows.start, n_cols, k0, k1, np.uint32(block))
    return out


def uniforms(seed, stream, rows, n_cols, block=0):
    """Uniforms on (0, 1) with the same counter layout as ``normals``."""
    k0, k1 = _key(seed, stream)
    out = np.empty((len(rows), n_cols))
    _uniforms(out, rows.start, n_cols, k0, k1, np.uint32(block))
    return out
