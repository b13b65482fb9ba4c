"""Longest common substring ``M_n`` of two length-``n`` prefixes, and the
block-collision estimator of the order-2 Renyi entropy."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import Schedule, SymbolicSequence
from .errors import AlphabetMismatchError, DegenerateError, InvalidSpecError
from .estimators import SlopeFit, exponent_series
from .processes import EntropyValue


def _check_pair(x: SymbolicSequence, y: SymbolicSequence, n: int) -> None:
    if x.alphabet_size != y.alphabet_size:
        raise AlphabetMismatchError(
            f"alphabet sizes differ: {x.alphabet_size} vs {y.alphabet_size}")
    if not 0 <= n <= min(x.length, y.length):
        raise InvalidSpecError(f"n={n} outside [0, {min(x.length, y.length)}]")


def lcs_naive(x: SymbolicSequence, y: SymbolicSequence, n: int) -> int:
    """Quadratic dynamic program over common-suffix lengths.

    ``run[j]`` holds the length of the longest common suffix of ``x[:i+1]``
    and ``y[:j+1]``; one vectorized row per symbol of ``x``.
    """
    _check_pair(x, y, n)
    if n == 0:
        return 0
    xs, ys = x.symbols[:n], y.symbols[:n]
    run = np.zeros(n, dtype=np.int64)
    best = 0
    for i in range(n):
        shifted = np.empty_like(run)
        shifted[0] = 0
        shifted[1:] = run[:-1]
        run = np.where(ys == xs[i], shifted + 1, 0)
        best = max(best, int(run.max()))
    return best


@numba.njit(cache=True)
def _build_automaton(text, sigma):
    n = text.size
    cap = max(2 * n, 2)
    trans = np.full((cap, sigma), -1, dtype=np.int32)
    link = np.full(cap, -1, dtype=np.int32)
    length = np.zeros(cap, dtype=np.int32)
    size = 1
    last = 0
    for i in range(n):
        c = text[i]
        cur = size
        size += 1
        length[cur] = length[last] + 1
        p = last
        while p != -1 and trans[p, c] == -1:
            trans[p, c] = cur
            p = link[p]
        if p == -1:
            link[cur] = 0
        else:
            q = trans[p, c]
            if length[p] + 1 == length[q]:
                link[cur] = q
            else:
                clone = size
                size += 1
                length[clone] = length[p] + 1
                for a in range(sigma):
                    trans[clone, a] = trans[q, a]
                link[clone] = link[q]
                while p != -1 and trans[p, c] == q:
                    trans[p, c] = clone
                    p = link[p]
                link[q] = clone
                link[cur] = clone
        last = cur
    return trans, link, length


@numba.njit(cache=True)
def _stream_match(trans, link, length, pattern):
    v = 0
    cur = 0
    best = 0
    for i in range(pattern.size):
        c = pattern[i]
        while v != 0 and trans[v, c] == -1:
            v = link[v]
            cur = length[v]
        if trans[v, c] != -1:
            v = trans[v, c]
            cur += 1
        else:
            v = 0
            cur = 0
        if cur > best:
            best = cur
    return best


def lcs_fast(x: SymbolicSequence, y: SymbolicSequence, n: int) -> int:
    """Suffix automaton of ``x[:n]``, then stream ``y[:n]`` through it while
    tracking the longest current match.  Linear time and memory."""
    _check_pair(x, y, n)
    if n == 0:
        return 0
    trans, link, length = _build_automaton(x.symbols[:n], x.alphabet_size)
    return int(_stream_match(trans, link, length, y.symbols[:n]))


@dataclass(frozen=True, eq=False)
class MatchProfile:
    schedule: Schedule
    m_values: np.ndarray
    source: tuple = ("x", "y")
    fit: SlopeFit | None = None
    degenerate: bool = False

    kind = "lcs"

    @property
    def n_values(self) -> np.ndarray:
        return self.schedule.values


def match_profile(x: SymbolicSequence, y: SymbolicSequence, schedule: Schedule,
                  source=("x", "y")) -> MatchProfile:
    """``M_n`` along ``schedule`` plus the slope of ``M_n`` against ``log n``
    over the upper half of the schedule."""
    _check_pair(x, y, schedule.max)
    m = np.array([lcs_fast(x, y, n) for n in schedule], dtype=np.int64)
    profile = MatchProfile(schedule, m, tuple(source))
    degenerate = bool(np.any(m == schedule.values))
    fit = None
    if not degenerate and len(schedule) >= 4:
        fit = exponent_series(profile).fit
    return MatchProfile(schedule, m, tuple(source), fit, degenerate)


# ---------------------------------------------------------------------------
# collision entropy


def block_codes(symbols: np.ndarray, sigma: int, k: int) -> np.ndarray:
    """Integer code of every sliding ``k``-block (overlapping windows)."""
    M = symbols.size - k + 1
    if sigma**k < 2**62:
        codes = np.zeros(M, dtype=np.int64)
        for t in range(k):
            codes = codes * sigma + symbols[t:t + M]
        return codes
    # too many cylinders for a packed code: relabel rows instead
    windows = np.lib.stride_tricks.sliding_window_view(symbols, k)
    _, inverse = np.unique(windows, axis=0, return_inverse=True)
    return inverse.astype(np.int64).ravel()


def renyi_collision_estimate(seq: SymbolicSequence, k: int) -> EntropyValue:
    """``-(1/k) log`` of the fraction of colliding pairs among the sliding
    ``k``-blocks, using the unbiased count ``sum N_C (N_C - 1) / (M (M - 1))``.

    The plug-in value ``sum (N_C / M)**2`` is reported in ``extra``.
    """
    if k < 1:
        raise InvalidSpecError("k must be at least 1")
    if seq.length < k + 1:
        raise InvalidSpecError("sequence too short for the block length")
    codes = block_codes(seq.symbols, seq.alphabet_size, k)
    M = codes.size
    _, counts = np.unique(codes, return_counts=True)
    counts = counts.astype(np.float64)
    pairs = float(np.sum(counts * (counts - 1.0)))
    if pairs == 0.0:
        raise DegenerateError(f"no colliding {k}-blocks: k too large for the sample",
                              {"k": k, "windows": M, "distinct": int(counts.size)})
    frac = pairs / (M * (M - 1.0))
    plug = float(np.sum((counts / M) ** 2))
    h2 = max(0.0, -math.log(frac) / k)
    return EntropyValue(h2, "estimated", k,
                        extra={"collision_fraction": frac,
                               "plug_in": -math.log(plug) / k,
                               "windows": M,
                               "distinct_blocks": int(counts.size)})
