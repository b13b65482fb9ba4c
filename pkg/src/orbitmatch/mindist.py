"""Shortest distance ``m_n`` between two orbits, hitting times, and the
checks that tie ``m_n`` to waiting times and to longest common substrings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ._kernels import cell_ids, pair_distance
from .core import (
    Metric,
    OrbitCloud,
    Schedule,
    SymbolicSequence,
    TorusPoint,
    check_compatible,
)
from .errors import AlphabetMismatchError, InvalidSpecError
from .matching import lcs_fast

INFINITY = math.inf


@dataclass(frozen=True, eq=False)
class MinDistProfile:
    schedule: Schedule
    m_values: np.ndarray
    exponents: np.ndarray
    zero_flags: np.ndarray

    kind = "mindist"

    @property
    def has_zero(self) -> bool:
        return bool(self.zero_flags.any())


def _euclid(X: OrbitCloud) -> bool:
    return X.metric is Metric.TORUS_EUCLID


# ---------------------------------------------------------------------------
# brute force


@numba.njit(cache=True)
def _naive(P, Q, n, euclid):
    best = np.inf
    for i in range(n):
        for j in range(n):
            d = pair_distance(P, i, Q, j, euclid)
            if d < best:
                best = d
    return best


def mindist_naive(X: OrbitCloud, Y: OrbitCloud, n: int) -> float:
    """Minimum of ``d(x_i, y_j)`` over all ``0 <= i, j < n``."""
    check_compatible(X, Y)
    if not 1 <= n <= min(X.n, Y.n):
        raise InvalidSpecError(f"n={n} outside [1, {min(X.n, Y.n)}]")
    return float(_naive(X.points, Y.points, n, _euclid(X)))


# ---------------------------------------------------------------------------
# d = 1: activation tree over the sorted order of each cloud


@numba.njit(cache=True)
def _tree_insert(tree, size, pos):
    i = pos + size
    while i >= 1:
        tree[i] += 1
        i >>= 1


@numba.njit(cache=True)
def _tree_pred(tree, size, pos):
    """Largest active position ``< pos``, or -1."""
    if pos <= 0:
        return -1
    i = pos - 1 + size
    if tree[i] > 0:
        return pos - 1
    found = False
    while i > 1:
        if (i & 1) == 1 and tree[i - 1] > 0:
            i -= 1
            found = True
            break
        i >>= 1
    if not found:
        return -1
    while i < size:
        i = 2 * i + 1 if tree[2 * i + 1] > 0 else 2 * i
    return i - size


@numba.njit(cache=True)
def _tree_succ(tree, size, pos):
    """Smallest active position ``>= pos``, or -1."""
    if pos >= size:
        return -1
    i = pos + size
    if tree[i] > 0:
        return pos
    found = False
    while i > 1:
        if (i & 1) == 0 and tree[i + 1] > 0:
            i += 1
            found = True
            break
        i >>= 1
    if not found:
        return -1
    while i < size:
        i = 2 * i if tree[2 * i] > 0 else 2 * i + 1
    return i - size


@numba.njit(cache=True)
def _circle_nearest(P, i, Q, order, tree, size, pos, euclid):
    """Nearest active point of ``Q`` to ``P[i]``; ``pos`` is the insertion
    position of ``P[i]`` in ``Q``'s sorted order."""
    best = np.inf
    if tree[1] == 0:
        return best
    a = _tree_pred(tree, size, pos)
    if a == -1:
        a = _tree_pred(tree, size, size)  # wrap to the largest
    b = _tree_succ(tree, size, pos)
    if b == -1:
        b = _tree_succ(tree, size, 0)  # wrap to the smallest
    for cand in (a, b):
        d = pair_distance(P, i, Q, order[cand], euclid)
        if d < best:
            best = d
    return best


@numba.njit(cache=True)
def _fast_1d(P, Q, n, record_at, euclid):
    ordP = np.argsort(P[:n, 0], kind="mergesort")
    ordQ = np.argsort(Q[:n, 0], kind="mergesort")
    sortedP = P[:n, 0][ordP]
    sortedQ = Q[:n, 0][ordQ]
    rankP = np.empty(n, dtype=np.int64)
    rankQ = np.empty(n, dtype=np.int64)
    for r in range(n):
        rankP[ordP[r]] = r
        rankQ[ordQ[r]] = r
    posPinQ = np.searchsorted(sortedQ, P[:n, 0])
    posQinP = np.searchsorted(sortedP, Q[:n, 0])
    size = 1
    while size < n:
        size *= 2
    treeP = np.zeros(2 * size, dtype=np.int64)
    treeQ = np.zeros(2 * size, dtype=np.int64)
    out = np.empty(record_at.size, dtype=np.float64)
    best = np.inf
    k = 0
    for i in range(n):
        d = _circle_nearest(P, i, Q, ordQ, treeQ, size, posPinQ[i], euclid)
        if d < best:
            best = d
        _tree_insert(treeP, size, rankP[i])
        d = _circle_nearest(Q, i, P, ordP, treeP, size, posQinP[i], euclid)
        if d < best:
            best = d
        _tree_insert(treeQ, size, rankQ[i])
        while k < record_at.size and record_at[k] == i + 1:
            out[k] = best
            k += 1
    return out


# ---------------------------------------------------------------------------
# d >= 2: uniform grid with refinement and ring search

MAX_GRID_BITS_TOTAL = 22
MAX_OCCUPANCY = 8


@numba.njit(cache=True)
def _rebuild(P, count, bits, head, nxt):
    head[:] = -1
    if count == 0:
        return
    cells = cell_ids(P[:count], bits)
    for i in range(count):
        c = cells[i]
        nxt[i] = head[c]
        head[c] = i


@numba.njit(cache=True)
def _grid_nearest(Pq, i, Q, count, bits, head, nxt, euclid):
    """Nearest of ``Q[:count]`` to ``Pq[i]`` by expanding Chebyshev rings."""
    best = np.inf
    if count == 0:
        return best
    d = Q.shape[1]
    G = 1 << bits
    if bits == 0:
        for j in range(count):
            dist = pair_distance(Pq, i, Q, j, euclid)
            if dist < best:
                best = dist
        return best
    shift = numba.uint64(64 - bits)
    home = np.empty(d, dtype=np.int64)
    for k in range(d):
        home[k] = np.int64(Pq[i, k] >> shift)
    width = 1.0 / G
    R = 0
    while True:
        if 2 * R + 1 >= G:
            for j in range(count):
                dist = pair_distance(Pq, i, Q, j, euclid)
                if dist < best:
                    best = dist
            return best
        side = 2 * R + 1
        total = side**d
        for o in range(total):
            rem = o
            cell = 0
            mult = 1
            on_ring = False
            for k in range(d):
                off = rem % side - R
                rem //= side
                if off == R or off == -R:
                    on_ring = True
                cell += ((home[k] + off) % G) * mult
                mult *= G
            if not on_ring and R > 0:
                continue
            j = head[cell]
            while j != -1:
                dist = pair_distance(Pq, i, Q, j, euclid)
                if dist < best:
                    best = dist
                j = nxt[j]
        # anything outside the rings seen so far is at least R cells away
        if best <= R * width:
            return best
        R += 1


@numba.njit(cache=True)
def _initial_bits(n0, d):
    cell = n0 ** (-1.0 / d)
    bits = int(np.floor(np.log2(1.0 / cell)))
    if bits < 0:
        bits = 0
    cap = MAX_GRID_BITS_TOTAL // d
    return bits if bits < cap else cap


@numba.njit(cache=True)
def _fast_grid(P, Q, n, record_at, euclid, n0):
    d = P.shape[1]
    cap = MAX_GRID_BITS_TOTAL // d
    bits_p = _initial_bits(n0, d)
    bits_q = bits_p
    head_p = np.full(1 << (bits_p * d), -1, dtype=np.int64)
    head_q = np.full(1 << (bits_q * d), -1, dtype=np.int64)
    nxt_p = np.full(n, -1, dtype=np.int64)
    nxt_q = np.full(n, -1, dtype=np.int64)
    out = np.empty(record_at.size, dtype=np.float64)
    best = np.inf
    k = 0
    for i in range(n):
        dist = _grid_nearest(P, i, Q, i, bits_q, head_q, nxt_q, euclid)
        if dist < best:
            best = dist
        # insert P[i]
        if bits_p < cap and (i + 1) > MAX_OCCUPANCY * (1 << (bits_p * d)):
            bits_p += 1
            head_p = np.full(1 << (bits_p * d), -1, dtype=np.int64)
            _rebuild(P, i, bits_p, head_p, nxt_p)
        c = cell_ids(P[i:i + 1], bits_p)[0]
        nxt_p[i] = head_p[c]
        head_p[c] = i
        dist = _grid_nearest(Q, i, P, i + 1, bits_p, head_p, nxt_p, euclid)
        if dist < best:
            best = dist
        if bits_q < cap and (i + 1) > MAX_OCCUPANCY * (1 << (bits_q * d)):
            bits_q += 1
            head_q = np.full(1 << (bits_q * d), -1, dtype=np.int64)
            _rebuild(Q, i, bits_q, head_q, nxt_q)
        c = cell_ids(Q[i:i + 1], bits_q)[0]
        nxt_q[i] = head_q[c]
        head_q[c] = i
        while k < record_at.size and record_at[k] == i + 1:
            out[k] = best
            k += 1
    return out


def mindist_values(X: OrbitCloud, Y: OrbitCloud, values) -> np.ndarray:
    """Running minimum ``m_n`` at each requested ``n`` (ascending)."""
    check_compatible(X, Y)
    values = np.asarray(values, dtype=np.int64)
    n = int(values[-1])
    if n > min(X.n, Y.n):
        raise InvalidSpecError(f"schedule reaches {n} but clouds hold {min(X.n, Y.n)} points")
    if X.dim == 1:
        return _fast_1d(X.points, Y.points, n, values, _euclid(X))
    return _fast_grid(X.points, Y.points, n, values, _euclid(X), max(int(values[0]), 1))


def mindist_fast(X: OrbitCloud, Y: OrbitCloud, schedule: Schedule) -> MinDistProfile:
    """Process both orbits in index order, querying each new point against
    the other cloud's index; the running minimum is read off at every
    schedule value."""
    m = mindist_values(X, Y, schedule.values)
    n = schedule.values.astype(np.float64)
    zero = m == 0.0
    with np.errstate(divide="ignore"):
        exps = np.where(zero, np.nan, np.log(np.where(zero, 1.0, m)) / -np.log(n))
    return MinDistProfile(schedule, m, exps, zero)


# ---------------------------------------------------------------------------
# hitting times and duality


@numba.njit(cache=True)
def _first_entry(P, C, r, euclid):
    for k in range(1, P.shape[0]):
        if pair_distance(P, k, C, 0, euclid) < r:
            return k
    return -1


def hitting_time(X: OrbitCloud, center: TorusPoint, r: float):
    """Smallest ``k >= 1`` with ``d(x_k, center) < r``; ``INFINITY`` when the
    cloud never enters the ball."""
    if r <= 0:
        raise InvalidSpecError("r must be positive")
    if center.dim != X.dim:
        raise InvalidSpecError("center dimension does not match the cloud")
    C = center.coords.reshape(1, -1)
    k = int(_first_entry(X.points, C, float(r), _euclid(X)))
    return INFINITY if k < 0 else k


@dataclass(frozen=True)
class DualityReport:
    n: int
    r: float
    m_n: float
    wait_forward: float  # W_{B(y0, r)}(x0)
    wait_backward: float | None  # W_{B(x0, r)}(y0); isometric systems only
    forward_applies: bool
    forward_ok: bool
    converse_applies: bool
    converse_ok: bool

    @property
    def ok(self) -> bool:
        return self.forward_ok and self.converse_ok


def check_duality(X: OrbitCloud, Y: OrbitCloud, n: int, r: float,
                  isometric: bool = False) -> DualityReport:
    """Evaluate both waiting-time implications on one instance.

    Forward (any map): if ``x0`` enters ``B(y0, r)`` at some time ``k < n``
    then ``m_n < r``; the witness pair is ``(k, 0)``.

    Converse (isometries such as rotations, where ``d(T^i x, T^j y)``
    depends only on ``i - j``): if neither orbit enters the other's ball
    before time ``n`` and ``d(x0, y0) >= r`` then ``m_n >= r``.  Entry of
    ``y0``'s orbit into ``B(x0, r)`` equals entry of ``x0``'s backward orbit
    into ``B(y0, r)``.
    """
    m = mindist_naive(X, Y, n)
    W = hitting_time(X.head(n), Y.point(0), r)
    fwd_applies = W <= n - 1
    fwd_ok = (m < r) if fwd_applies else True
    Wb = None
    conv_applies = False
    conv_ok = True
    if isometric:
        Wb = hitting_time(Y.head(n), X.point(0), r)
        d0 = float(_naive(X.points[:1], Y.points[:1], 1, _euclid(X)))
        conv_applies = W > n - 1 and Wb > n - 1 and d0 >= r
        conv_ok = (m >= r) if conv_applies else True
    return DualityReport(n, float(r), m, W, Wb, bool(fwd_applies), bool(fwd_ok),
                         bool(conv_applies), bool(conv_ok))


# ---------------------------------------------------------------------------
# symbolic bridge


def max_shift_agreement(x: SymbolicSequence, y: SymbolicSequence, n: int) -> int:
    """``max`` over ``0 <= i, j < n`` of the common-prefix length of the
    shifted sequences ``x[i:]`` and ``y[j:]``, i.e. ``-log m_n`` under the
    symbolic metric."""
    xs, ys = x.symbols, y.symbols
    Ly = ys.size
    run = np.zeros(Ly + 1, dtype=np.int64)  # run[j] = lcp(x[i+1:], y[j:])
    best = 0
    for i in range(xs.size - 1, -1, -1):
        row = np.zeros(Ly + 1, dtype=np.int64)
        row[:Ly] = np.where(ys == xs[i], run[1:] + 1, 0)
        run = row
        if i < n:
            best = max(best, int(run[:n].max()))
    return best


@dataclass(frozen=True)
class BridgeReport:
    n: int
    lcs_n: int
    neglog_m_n: int
    lcs_2n: int
    applies: bool
    holds: bool


def bridge_check(x: SymbolicSequence, y: SymbolicSequence, n: int) -> BridgeReport:
    """``M_n <= -log m_n <= M_2n`` under the symbolic metric, asserted
    whenever ``-log m_n <= n``."""
    if x.alphabet_size != y.alphabet_size:
        raise AlphabetMismatchError("alphabet sizes differ")
    if min(x.length, y.length) < 2 * n:
        raise InvalidSpecError("sequences must have length at least 2n")
    k = max_shift_agreement(x, y, n)
    a = lcs_fast(x, y, n)
    b = lcs_fast(x, y, 2 * n)
    applies = k <= n
    holds = (a <= k <= b) if applies else True
    return BridgeReport(n, a, k, b, applies, holds)
