"""Compiled distance kernels on fixed-point torus coordinates.

Every module that compares torus points goes through :func:`pair_distance`,
so brute-force and indexed code paths round identically.
"""

import math

import numba
import numpy as np

INV_TWO64 = 2.0**-64


@numba.njit(cache=True, inline="always")
def circle_gap(a, b):
    d = a - b
    e = b - a
    return d if d < e else e


@numba.njit(cache=True)
def pair_distance(P, i, Q, j, euclid):
    d = P.shape[1]
    if euclid:
        s = 0.0
        for k in range(d):
            f = float(circle_gap(P[i, k], Q[j, k])) * INV_TWO64
            s += f * f
        return math.sqrt(s)
    m = numba.uint64(0)
    for k in range(d):
        g = circle_gap(P[i, k], Q[j, k])
        if g > m:
            m = g
    return float(m) * INV_TWO64


@numba.njit(cache=True)
def cell_ids(P, bits):
    """Row-major cell index of each point on a ``2**bits``-per-axis grid."""
    n, d = P.shape
    out = np.empty(n, dtype=np.int64)
    if bits == 0:
        out[:] = 0
        return out
    shift = numba.uint64(64 - bits)
    G = 1 << bits
    for i in range(n):
        c = 0
        for k in range(d - 1, -1, -1):
            c = c * G + np.int64(P[i, k] >> shift)
        out[i] = c
    return out
