import numpy as np
from scipy import stats

from polyvolterra.rng import normals, philox4x32, uniforms


def _hex(words):
    return [int(x) for x in words]


def test_philox_known_answers():
    # reference vectors for Philox4x32-10
    assert _hex(philox4x32(0, 0, 0, 0, 0, 0)) == [0x6627e8d5, 0xe169c58d, 0xbc57ac4c,
                                                    0x9b00dbd8]
    assert _hex(philox4x32(*[0xffffffff] * 6)) == [0x408f276d, 0x41c83b0e, 0xa20bc7c6,
                                                     0x6d5451fd]
    assert _hex(philox4x32(0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344,
                           0xa4093822, 0x299f31d0)) == [0xd16cfe09, 0x94fdcceb, 0x5001e420,
                                                        0x24126ea1]


def test_draws_are_functions_of_row():
    a = normals(5, 0, range(0, 100), 7)
    b = normals(5, 0, range(40, 60), 7)
    assert np.array_equal(a[40:60], b)
    assert not np.array_equal(normals(6, 0, range(0, 100), 7), a)
    assert not np.array_equal(normals(5, 1, range(0, 100), 7), a)
    assert not np.array_equal(normals(5, 0, range(0, 100), 7, block=1), a)


def test_distributions():
    z = normals(1, 0, range(50000), 4).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3
    u = uniforms(1, 0, range(50000), 4).ravel()
    assert np.all((u > 0) & (u < 1))
    assert stats.kstest(u, "uniform").pvalue > 1e-3
