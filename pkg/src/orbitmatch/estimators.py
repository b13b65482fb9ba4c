"""Correlation sums, correlation dimension, log-log slope fitting and the
ball-measure moment diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from ._kernels import cell_ids, pair_distance
from .core import Metric, OrbitCloud, Rng, upper_half
from .errors import DegenerateError, InvalidSpecError


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    window: tuple
    residual: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 3:
            raise DegenerateError("a slope fit needs at least 3 points")


def fit_line(x, y, window=None) -> SlopeFit:
    """Ordinary least squares ``y ~ slope * x + intercept``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise DegenerateError("a slope fit needs at least 3 points", {"n_points": int(x.size)})
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise DegenerateError("all abscissae coincide")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = float(np.sqrt(np.mean((y - slope * x - intercept) ** 2)))
    if window is None:
        window = (float(x.min()), float(x.max()))
    return SlopeFit(slope, intercept, tuple(window), resid, int(x.size))


# ---------------------------------------------------------------------------
# correlation sums


@dataclass(frozen=True, eq=False)
class CorrelationCurve:
    radii: np.ndarray  # decreasing
    c_values: np.ndarray
    pair_counts: np.ndarray
    total_pairs: int


def _grid_bits(n, d, r_max):
    """Finest power-of-two grid whose cells are at least ``r_max`` wide and
    hold about one point or more."""
    if r_max >= 1.0 / 3.0:
        return 0
    by_radius = int(math.floor(math.log2(1.0 / r_max)))
    by_count = int(math.floor(math.log2(max(4 * n, 1)) / d))
    bits = min(by_radius, by_count, 62 // d)
    return bits if (1 << bits) >= 3 else 0


@numba.njit(cache=True)
def _cell_index(cells, n_cells):
    order = np.argsort(cells, kind="mergesort")
    start = np.zeros(n_cells + 1, dtype=np.int64)
    for c in cells:
        start[c + 1] += 1
    for c in range(n_cells):
        start[c + 1] += start[c]
    return order, start


@numba.njit(cache=True)
def _neighbour_cells(cell, bits, d):
    G = 1 << bits
    coords = np.empty(d, dtype=np.int64)
    c = cell
    for k in range(d):
        coords[k] = c % G
        c //= G
    n_off = 3**d
    out = np.empty(n_off, dtype=np.int64)
    for o in range(n_off):
        rem = o
        idx = 0
        mult = 1
        for k in range(d):
            off = rem % 3 - 1
            rem //= 3
            idx += ((coords[k] + off) % G) * mult
            mult *= G
        out[o] = idx
    return out


@numba.njit(cache=True)
def _pair_histogram(P, radii_asc, euclid, skip, bits):
    """``hist[k]`` counts pairs whose distance falls in
    ``[radii_asc[k-1], radii_asc[k])`` (``hist[0]``: below the smallest)."""
    n, d = P.shape
    m = radii_asc.size
    hist = np.zeros(m + 1, dtype=np.int64)
    r_max = radii_asc[m - 1]
    if bits == 0:
        for i in range(n):
            for j in range(i + 1 + skip, n):
                dist = pair_distance(P, i, P, j, euclid)
                if dist < r_max:
                    hist[np.searchsorted(radii_asc, dist, side="right")] += 1
        return hist
    cells = cell_ids(P, bits)
    n_cells = 1 << (bits * d)
    order, start = _cell_index(cells, n_cells)
    for i in range(n):
        nb = _neighbour_cells(cells[i], bits, d)
        for c in nb:
            for t in range(start[c], start[c + 1]):
                j = order[t]
                if j <= i + skip:
                    continue
                dist = pair_distance(P, i, P, j, euclid)
                if dist < r_max:
                    hist[np.searchsorted(radii_asc, dist, side="right")] += 1
    return hist


def _pair_histogram_brute(P, radii_asc, euclid, skip):
    """Row-by-row numpy evaluation, independent of the compiled kernels."""
    n = P.shape[0]
    hist = np.zeros(radii_asc.size + 1, dtype=np.int64)
    for i in range(n - 1 - skip):
        Q = P[i + 1 + skip:]
        d = Q - P[i]
        gap = np.minimum(d, np.uint64(0) - d)
        if euclid:
            f = gap.astype(np.float64) * 2.0**-64
            s = np.zeros(Q.shape[0])
            for k in range(P.shape[1]):
                s += f[:, k] * f[:, k]
            dist = np.sqrt(s)
        else:
            dist = gap.max(axis=1).astype(np.float64) * 2.0**-64
        dist = dist[dist < radii_asc[-1]]
        np.add.at(hist, np.searchsorted(radii_asc, dist, side="right"), 1)
    return hist


def _skip(theiler):
    # kernels take the number of extra neighbours skipped beyond j = i + 1
    if theiler < 0:
        raise InvalidSpecError("theiler window must be nonnegative")
    return max(int(theiler) - 1, 0)


def _eligible_pairs(n, skip):
    if skip >= n:
        return 0
    k = n - 1 - skip  # pairs with j - i > skip
    return k * (k + 1) // 2


def _curve_from_hist(radii_desc, hist, total):
    counts_asc = np.cumsum(hist)[: radii_desc.size]
    counts = counts_asc[::-1].copy()
    return CorrelationCurve(radii_desc, counts / total, counts, int(total))


def _check_radii(radii):
    radii = np.asarray(radii, dtype=np.float64)
    if radii.size == 0:
        raise InvalidSpecError("radii must be nonempty")
    if np.any(radii <= 0):
        raise InvalidSpecError("radii must be positive")
    if np.any(np.diff(radii) >= 0):
        raise InvalidSpecError("radii must be strictly decreasing")
    return radii


def correlation_sum(cloud: OrbitCloud, radii, theiler: int = 0) -> CorrelationCurve:
    """Fraction of point pairs closer than each radius,
    ``2 / (N (N - 1)) * #{i < j : d(p_i, p_j) < r}``.

    Temporally close pairs with ``|i - j| < theiler`` are excluded
    (``theiler`` of 0 or 1 keeps all distinct pairs).  All radii are counted
    in one sweep over a grid index.
    """
    radii = _check_radii(radii)
    if cloud.n < 2:
        raise InvalidSpecError("need at least two points")
    asc = radii[::-1].copy()
    skip = _skip(theiler)
    bits = _grid_bits(cloud.n, cloud.dim, float(asc[-1]))
    hist = _pair_histogram(cloud.points, asc, cloud.metric is Metric.TORUS_EUCLID, skip, bits)
    total = _eligible_pairs(cloud.n, skip)
    if total == 0:
        raise InvalidSpecError("Theiler window leaves no pairs")
    return _curve_from_hist(radii, hist, total)


def correlation_sum_brute(cloud: OrbitCloud, radii, theiler: int = 0) -> CorrelationCurve:
    """All-pairs reference for :func:`correlation_sum`."""
    radii = _check_radii(radii)
    asc = radii[::-1].copy()
    skip = _skip(theiler)
    hist = _pair_histogram_brute(cloud.points, asc, cloud.metric is Metric.TORUS_EUCLID, skip)
    total = _eligible_pairs(cloud.n, skip)
    if total == 0:
        raise InvalidSpecError("Theiler window leaves no pairs")
    return _curve_from_hist(radii, hist, total)


def sample_pair_distances(cloud: OrbitCloud, n_pairs: int = 200_000, seed: int = 0x5EED) -> np.ndarray:
    rng = Rng(seed)
    n = cloud.n
    i = (rng.random(n_pairs) * n).astype(np.int64)
    j = (rng.random(n_pairs) * (n - 1)).astype(np.int64)
    j = np.where(j >= i, j + 1, j)
    from .core import circle_dist_fixed, from_fixed
    g = from_fixed(circle_dist_fixed(cloud.points[i], cloud.points[j]))
    if cloud.metric is Metric.TORUS_EUCLID:
        return np.sqrt(np.sum(g * g, axis=1))
    return g.max(axis=1)


def default_radii(cloud: OrbitCloud, ratio: float = 2**0.25,
                  lo_pct: float = 0.1, hi_pct: float = 50.0) -> np.ndarray:
    """Geometric radii from the ``lo_pct`` to the ``hi_pct`` percentile of
    sampled pairwise distances, returned in decreasing order."""
    dists = sample_pair_distances(cloud)
    lo, hi = np.percentile(dists, [lo_pct, hi_pct])
    if not lo > 0 or not hi > lo:
        raise DegenerateError("pairwise distances have no spread",
                              {"lo": float(lo), "hi": float(hi)})
    m = int(math.floor(math.log(hi / lo) / math.log(ratio))) + 1
    return hi / ratio ** np.arange(m)


def correlation_dimension(curve: CorrelationCurve, window=None,
                          min_pairs: int = 100, ceiling: float = 0.2) -> SlopeFit:
    """Slope of ``log C(r)`` against ``log r``.

    Without an explicit ``(r_lo, r_hi)`` window the radii kept are those with
    at least ``min_pairs`` pairs and ``C(r) <= ceiling`` (the pair-distance
    quantile above which saturation sets in).
    """
    r = curve.radii
    if window is not None:
        lo, hi = window
        keep = (r >= lo) & (r <= hi) & (curve.pair_counts > 0)
    else:
        keep = (curve.pair_counts >= min_pairs) & (curve.c_values <= ceiling)
    if keep.sum() < 3:
        raise DegenerateError(
            "fewer than 3 usable radii in the scaling window",
            {"usable": int(keep.sum()), "radii": r.tolist(),
             "pair_counts": curve.pair_counts.tolist()})
    rr = r[keep]
    return fit_line(np.log(rr), np.log(curve.c_values[keep]),
                    window=(float(rr.min()), float(rr.max())))


# ---------------------------------------------------------------------------
# ball-measure moments


@numba.njit(cache=True)
def _ball_counts(P, r, euclid, bits):
    n, d = P.shape
    counts = np.ones(n, dtype=np.int64)  # each point lies in its own ball
    if bits == 0:
        for i in range(n):
            for j in range(i + 1, n):
                if pair_distance(P, i, P, j, euclid) < r:
                    counts[i] += 1
                    counts[j] += 1
        return counts
    cells = cell_ids(P, bits)
    order, start = _cell_index(cells, 1 << (bits * d))
    for i in range(n):
        for c in _neighbour_cells(cells[i], bits, d):
            for t in range(start[c], start[c + 1]):
                j = order[t]
                if j > i and pair_distance(P, i, P, j, euclid) < r:
                    counts[i] += 1
                    counts[j] += 1
    return counts


@dataclass(frozen=True)
class MomentReport:
    r: float
    first: float
    second: float
    ratio: float
    cauchy_schwarz_ok: bool


def ball_moment_check(cloud: OrbitCloud, r: float) -> MomentReport:
    """First and second moments of ``y -> mu(B(y, r))`` under the empirical
    measure of the cloud, and ``second / first**1.5``."""
    if cloud.n < 2 or r <= 0:
        raise InvalidSpecError("need at least two points and r > 0")
    bits = _grid_bits(cloud.n, cloud.dim, r)
    counts = _ball_counts(cloud.points, float(r), cloud.metric is Metric.TORUS_EUCLID, bits)
    mass = counts / cloud.n
    first = float(mass.mean())
    second = float(np.mean(mass * mass))
    ok = second >= first * first * (1 - 1e-12)
    if not ok:
        raise AssertionError("Cauchy-Schwarz violated: numerical bug")
    return MomentReport(float(r), first, second, second / first**1.5, ok)


def ball_moment_sweep(cloud: OrbitCloud, radii) -> tuple[float, list]:
    """Reports for every radius and the largest ratio (the empirical K)."""
    reports = [ball_moment_check(cloud, float(r)) for r in radii]
    return max(rep.ratio for rep in reports), reports


# ---------------------------------------------------------------------------
# exponent series


@dataclass(frozen=True, eq=False)
class ExponentSeries:
    fit: SlopeFit
    n: np.ndarray
    exponents: np.ndarray
    used: np.ndarray = field(repr=False)


def exponent_series(profile) -> ExponentSeries:
    """Per-``n`` exponents and the regression slope over the upper half.

    Shortest-distance profiles give ``log m_n / -log n`` and the slope of
    ``log m_n`` against ``-log n``; matching profiles give ``M_n / log n``
    and the slope of ``M_n`` against ``log n``.  Points flagged as exact
    zeros are dropped.
    """
    n = np.asarray(profile.schedule.values, dtype=np.float64)
    values = np.asarray(profile.m_values, dtype=np.float64)
    if profile.kind == "lcs":
        usable = np.ones(n.size, dtype=bool)
        x = np.log(n)
        y = values
        exps = values / np.log(n)
    else:
        usable = values > 0
        x = -np.log(n)
        with np.errstate(divide="ignore"):
            y = np.log(values)
        exps = np.where(usable, y / x, np.nan)
    if usable.sum() < 4:
        raise DegenerateError("profile has fewer than 4 usable points",
                              {"usable": int(usable.sum())})
    nu = n[usable]
    mask = upper_half(nu)
    sel = np.flatnonzero(usable)[mask]
    fit = fit_line(x[sel], y[sel], window=(float(n[sel].min()), float(n[sel].max())))
    return ExponentSeries(fit, n.astype(np.int64), exps, sel)
