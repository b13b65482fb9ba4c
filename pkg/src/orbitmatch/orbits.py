"""Orbits of the example maps as fixed-point point clouds.

Maps conjugate to a full shift on digits (``x -> m x mod 1``, products of
those, the dyadic ladder) are simulated exactly by shifting a random digit
stream.  The beta and Gauss maps are iterated forward in double precision;
their pointwise orbits drift from the true ones, but the measure-level
statistics the scaling laws depend on are preserved.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numba
import numpy as np
from scipy import sparse

from .core import Metric, OrbitCloud, Rng, to_fixed
from .errors import InvalidSpecError, OrbitMatchError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExpandingInteger:
    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise InvalidSpecError("ExpandingInteger needs an integer m >= 2")


@dataclass(frozen=True)
class DyadicLadder:
    pass


@dataclass(frozen=True)
class Beta:
    beta: float

    def __post_init__(self):
        if not self.beta > 1:
            raise InvalidSpecError("Beta needs beta > 1")


@dataclass(frozen=True)
class Gauss:
    pass


@dataclass(frozen=True)
class Rotation:
    theta: int  # 128-bit fixed point, theta / 2**128

    def __post_init__(self):
        if not 0 < self.theta < 2**128:
            raise InvalidSpecError("Rotation angle must lie in (0, 1) as 128-bit fixed point")


@dataclass(frozen=True)
class ProductExpanding:
    factors: tuple

    def __post_init__(self):
        factors = tuple(int(f) for f in self.factors)
        if not factors or min(factors) < 2:
            raise InvalidSpecError("ProductExpanding needs factors >= 2")
        object.__setattr__(self, "factors", factors)


MapSpec = ExpandingInteger | DyadicLadder | Beta | Gauss | Rotation | ProductExpanding


def map_dimension(spec: MapSpec) -> int:
    return len(spec.factors) if isinstance(spec, ProductExpanding) else 1


def correlation_dimension_of(spec: MapSpec) -> float:
    """Correlation dimension of the natural invariant measure: every
    one-dimensional example has an absolutely continuous measure with a
    density bounded away from zero and infinity, and products of expanding
    maps carry Lebesgue measure on the d-torus."""
    return float(map_dimension(spec))


def describe(spec: MapSpec) -> str:
    if isinstance(spec, ExpandingInteger):
        return f"expanding(m={spec.m})"
    if isinstance(spec, ProductExpanding):
        return "product(" + ",".join(map(str, spec.factors)) + ")"
    if isinstance(spec, Beta):
        return f"beta({spec.beta!r})"
    if isinstance(spec, Rotation):
        return f"rotation(0x{spec.theta:032x})"
    return type(spec).__name__.lower()


@dataclass(frozen=True)
class OrbitGenConfig:
    n: int
    seed: int = 0
    burn_in: int = 1000
    digit_depth: int = 96

    def __post_init__(self):
        if self.n < 1:
            raise InvalidSpecError("n must be positive")
        if self.burn_in < 0:
            raise InvalidSpecError("burn_in must be nonnegative")
        # the evaluation truncation error is 2**-digit_depth
        if self.digit_depth < 60:
            raise InvalidSpecError("digit_depth must be at least 60 so truncation stays below 2**-60")


# ---------------------------------------------------------------------------
# digit streams


@numba.njit(cache=True)
def _pack_windows(bits, starts):
    """64-bit word formed by ``bits[s:s+64]`` for every start ``s``."""
    out = np.empty(starts.size, dtype=np.uint64)
    for t in range(starts.size):
        s = starts[t]
        v = numba.uint64(0)
        for k in range(64):
            v = (v << numba.uint64(1)) | numba.uint64(bits[s + k])
        out[t] = v
    return out


def digits_needed(m: int, digit_depth: int) -> int:
    """Base-``m`` digits carrying at least ``digit_depth`` bits."""
    return int(math.ceil(digit_depth / math.log2(m)))


def expanding_coordinates(m: int, n: int, digit_depth: int, rng: Rng) -> np.ndarray:
    """Orbit of ``x -> m x mod 1`` as the digit shift: point ``i`` is the
    value of digits ``i .. i + D - 1`` truncated to 64-bit fixed point."""
    if m & (m - 1) == 0:
        b = m.bit_length() - 1
        nbits = (n - 1) * b + 64
        bits = rng.bits(nbits)
        return _pack_windows(bits, np.arange(n, dtype=np.int64) * b)
    D = digits_needed(m, digit_depth)
    digits = rng.digits(m, n + D - 1).tolist()
    top = m ** (D - 1)
    scale = m**D
    V = 0
    for d in digits[:D]:
        V = V * m + d
    out = np.empty(n, dtype=np.uint64)
    out[0] = (V << 64) // scale
    for i in range(1, n):
        V = (V % top) * m + digits[i + D - 1]
        out[i] = (V << 64) // scale
    return out


@numba.njit(cache=True)
def _ladder_starts(bits, n):
    """Start positions of successive points under the dyadic ladder: a
    point with ``k - 1`` leading zeros then a one is shifted by ``k``.
    Returns -1 entries when the bit buffer runs out."""
    starts = np.full(n, -1, dtype=np.int64)
    s = 0
    limit = bits.size - 64
    for i in range(n):
        if s > limit:
            return starts
        starts[i] = s
        k = 1
        while s + k - 1 < bits.size and bits[s + k - 1] == 0:
            k += 1
        s += k
    return starts


def ladder_coordinates(n: int, rng: Rng) -> np.ndarray:
    nbits = 2 * n + 256
    bits = rng.bits(nbits)
    while True:
        starts = _ladder_starts(bits, n)
        if starts[-1] >= 0:
            return _pack_windows(bits, starts)
        bits = np.concatenate([bits, rng.bits(nbits)])


# ---------------------------------------------------------------------------
# forward iteration


@numba.njit(cache=True)
def _iterate_beta(x0, beta, burn_in, n):
    x = x0
    for _ in range(burn_in):
        x = beta * x
        x -= np.floor(x)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = x
        x = beta * x
        x -= np.floor(x)
    return out


@numba.njit(cache=True)
def _iterate_gauss(x0, n):
    """Forward Gauss orbit; returns the number of valid points written
    (short when the orbit lands exactly on 0)."""
    out = np.empty(n, dtype=np.float64)
    x = x0
    for i in range(n):
        if x <= 0.0:
            return out, i
        out[i] = x
        y = 1.0 / x
        x = y - np.floor(y)
    return out, n


MAX_RESAMPLES = 100


def gauss_initial(u: float) -> float:
    """Inverse CDF of the Gauss measure ``dx / ((1 + x) log 2)``."""
    return 2.0**u - 1.0


def _gauss_orbit(n: int, rng: Rng) -> np.ndarray:
    for attempt in range(MAX_RESAMPLES):
        x0 = gauss_initial(float(rng.random(1)[0]))
        if x0 <= 0.0:
            continue
        out, valid = _iterate_gauss(x0, n)
        if valid == n:
            return out
        log.info("Gauss orbit hit 0 after %d steps; resampling x0 (attempt %d)", valid, attempt + 1)
    raise OrbitMatchError("Gauss orbit kept hitting the discontinuity")


def _beta_orbit(beta: float, n: int, burn_in: int, rng: Rng) -> np.ndarray:
    for attempt in range(MAX_RESAMPLES):
        x0 = float(rng.random(1)[0])
        out = _iterate_beta(x0, beta, burn_in, n)
        if out[-1] != 0.0 or n == 1:
            return out
        log.info("beta orbit collapsed to 0; resampling x0 (attempt %d)", attempt + 1)
    raise OrbitMatchError("beta orbit kept collapsing")


def generate_orbit(spec: MapSpec, cfg: OrbitGenConfig, rng: Rng | None = None,
                   metric: Metric = Metric.TORUS_MAX) -> OrbitCloud:
    """Points ``T^i x0`` for ``i < cfg.n`` with ``x0`` drawn from the
    invariant measure (or from Lebesgue followed by a burn-in for beta)."""
    if rng is None:
        rng = Rng(cfg.seed)
    n = cfg.n
    origin = f"{describe(spec)} seed={cfg.seed}"
    if isinstance(spec, ExpandingInteger):
        pts = expanding_coordinates(spec.m, n, cfg.digit_depth, rng)
    elif isinstance(spec, ProductExpanding):
        cols = [expanding_coordinates(m, n, cfg.digit_depth, rng.split(k))
                for k, m in enumerate(spec.factors)]
        pts = np.stack(cols, axis=1)
    elif isinstance(spec, DyadicLadder):
        pts = ladder_coordinates(n, rng)
    elif isinstance(spec, Rotation):
        x0 = rng.uniform_fixed(1)[0]
        step = np.uint64(spec.theta >> 64)
        pts = x0 + np.arange(n, dtype=np.uint64) * step
    elif isinstance(spec, Gauss):
        pts = to_fixed(_gauss_orbit(n, rng))
    elif isinstance(spec, Beta):
        if float(spec.beta).is_integer():
            # x -> k x mod 1 collapses to 0 in floating point; use the digit shift
            pts = expanding_coordinates(int(spec.beta), n, cfg.digit_depth, rng)
        else:
            pts = to_fixed(_beta_orbit(float(spec.beta), n, cfg.burn_in, rng))
    else:
        raise InvalidSpecError(f"unknown map spec {spec!r}")
    return OrbitCloud(pts, metric, origin)


@dataclass(frozen=True, eq=False)
class SpotCheck:
    steps: int
    prec: int
    deviation: np.ndarray  # circle distance between the two orbits per step
    agree_steps: int  # leading steps with deviation <= tol


def extended_spot_check(spec: MapSpec, x0: float, steps: int = 1000, prec: int = 113,
                        tol: float = 1e-6) -> SpotCheck:
    """Compare the double-precision orbit used by :func:`generate_orbit`
    with the same orbit iterated at ``prec`` bits (113 = IEEE quad).

    Both start from the same double ``x0``; the deviation grows at the
    Lyapunov rate, so ``agree_steps`` measures how long the double orbit
    tracks the true one before shadowing takes over.
    """
    import mpmath

    if isinstance(spec, Gauss):
        dbl, valid = _iterate_gauss(float(x0), steps)
        dbl = dbl[:valid]

        def step(x):
            y = 1 / x
            return y - mpmath.floor(y)
    elif isinstance(spec, Beta):
        dbl = _iterate_beta(float(x0), float(spec.beta), 0, steps)
        b = None

        def step(x):
            y = b * x
            return y - mpmath.floor(y)
    else:
        raise InvalidSpecError("spot checks apply to the float-iterated maps (Gauss, Beta)")
    ctx = mpmath.mp
    saved = ctx.prec
    try:
        ctx.prec = prec
        if isinstance(spec, Beta):
            b = mpmath.mpf(spec.beta)
        x = mpmath.mpf(float(x0))
        ext = np.empty(dbl.size)
        for i in range(dbl.size):
            ext[i] = float(x)
            if x == 0:
                ext[i + 1:] = 0.0
                break
            x = step(x)
    finally:
        ctx.prec = saved
    dev = np.abs(dbl - ext)
    dev = np.minimum(dev, 1.0 - dev)
    bad = np.flatnonzero(dev > tol)
    return SpotCheck(int(dbl.size), prec, dev, int(bad[0]) if bad.size else int(dbl.size))


def uniform_cloud(n: int, dim: int, rng: Rng, metric: Metric = Metric.TORUS_MAX) -> OrbitCloud:
    """``n`` independent Lebesgue-uniform points on the ``dim``-torus; the
    reference measure with correlation dimension ``dim``."""
    if n < 1 or dim < 1:
        raise InvalidSpecError("n and dim must be positive")
    pts = rng.uniform_fixed(n * dim).reshape(n, dim)
    return OrbitCloud(pts, metric, f"uniform(dim={dim})")


# ---------------------------------------------------------------------------
# Parry measure


def parry_density_bounds(beta: float) -> tuple[float, float]:
    """Lower and upper bounds on the Parry density of ``x -> beta x mod 1``."""
    if not beta > 1:
        raise InvalidSpecError("beta must exceed 1")
    lo = 1.0 - 1.0 / beta
    return lo, 1.0 / lo


def parry_density_ulam(beta: float, bins: int = 4096, tol: float = 1e-13,
                       max_iter: int = 100_000) -> np.ndarray:
    """Invariant density on a uniform grid by Ulam's method: power
    iteration of the bin-to-bin transfer matrix."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows, cols, vals = [], [], []
    for i in range(bins):
        a, b = beta * edges[i], beta * edges[i + 1]
        width = b - a
        k = math.floor(a)
        while k < b:
            lo, hi = max(a, k), min(b, k + 1)
            if hi > lo:
                y0, y1 = lo - k, hi - k
                j0 = min(int(y0 * bins), bins - 1)
                j1 = min(int(math.ceil(y1 * bins)), bins)
                for j in range(j0, j1):
                    ov = min(y1, edges[j + 1]) - max(y0, edges[j])
                    if ov > 0:
                        rows.append(i)
                        cols.append(j)
                        vals.append(ov / width)
            k += 1
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(bins, bins))
    PT = P.T.tocsr()
    mass = np.full(bins, 1.0 / bins)
    for _ in range(max_iter):
        nxt = PT @ mass
        nxt /= nxt.sum()
        if np.abs(nxt - mass).max() < tol:
            mass = nxt
            break
        mass = nxt
    return mass * bins


def parry_density_exact(beta: float, x, terms: int = 200) -> np.ndarray:
    """Unnormalized Parry density ``sum_{n : x < T^n 1} beta**-n``,
    normalized numerically on a fine grid."""
    x = np.asarray(x, dtype=np.float64)
    orbit = []
    t = 1.0
    for _ in range(terms):
        orbit.append(t)
        t = beta * t
        t -= math.floor(t)
    orbit = np.array(orbit)
    weights = beta ** -np.arange(terms, dtype=np.float64)

    def raw(z):
        return (np.asarray(z)[..., None] < orbit).astype(np.float64) @ weights

    grid = (np.arange(200_000) + 0.5) / 200_000
    norm = raw(grid).mean()
    return raw(x) / norm


def parry_cdf(density: np.ndarray) -> np.ndarray:
    """Cumulative distribution at the right edge of each bin."""
    return np.cumsum(density) / density.size


def kolmogorov_distance(samples: np.ndarray, cdf_at_edges: np.ndarray) -> float:
    """Sup distance between the empirical CDF of ``samples`` in [0, 1] and a
    piecewise-linear CDF given at the right edges of equal bins."""
    samples = np.sort(np.asarray(samples, dtype=np.float64))
    bins = cdf_at_edges.size
    edges = np.linspace(0.0, 1.0, bins + 1)
    F = np.concatenate([[0.0], cdf_at_edges])
    model = np.interp(samples, edges, F)
    n = samples.size
    upper = np.arange(1, n + 1) / n - model
    lower = model - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


# ---------------------------------------------------------------------------
# binary cloud format
#
#   magic   4 bytes  b"ORBC"
#   version u32      1
#   dim     u32
#   n       u64
#   metric  u32      0 = torus_max, 1 = torus_euclid
#   olen    u32      length of the UTF-8 origin string
#   origin  olen bytes
#   body    n * dim little-endian u64 words, row major
#
# all header integers little-endian.

_MAGIC = b"ORBC"
_VERSION = 1
_METRIC_TAGS = {Metric.TORUS_MAX: 0, Metric.TORUS_EUCLID: 1}
_TAG_METRICS = {v: k for k, v in _METRIC_TAGS.items()}
_HEADER = struct.Struct("<4sIIQII")


def cloud_to_bytes(cloud: OrbitCloud) -> bytes:
    origin = cloud.origin.encode("utf-8")
    header = _HEADER.pack(_MAGIC, _VERSION, cloud.dim, cloud.n,
                          _METRIC_TAGS[cloud.metric], len(origin))
    return header + origin + cloud.points.astype("<u8").tobytes()


def cloud_from_bytes(data: bytes) -> OrbitCloud:
    magic, version, dim, n, tag, olen = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC or version != _VERSION:
        raise InvalidSpecError("not an orbit cloud file")
    off = _HEADER.size
    origin = data[off:off + olen].decode("utf-8")
    off += olen
    body = np.frombuffer(data, dtype="<u8", count=n * dim, offset=off)
    return OrbitCloud(body.astype(np.uint64).reshape(n, dim), _TAG_METRICS[tag], origin)


def write_cloud(path, cloud: OrbitCloud) -> None:
    with open(path, "wb") as fh:
        fh.write(cloud_to_bytes(cloud))


def read_cloud(path) -> OrbitCloud:
    with open(path, "rb") as fh:
        return cloud_from_bytes(fh.read())
