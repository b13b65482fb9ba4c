"""Shared types: symbolic words, fixed-point torus points, metrics, schedules
and the deterministic random number generator.

Torus coordinates are unsigned 64-bit integers read as ``k / 2**64``.  All
circle arithmetic (addition, subtraction, the circle norm) is therefore exact
and wraps modulo one for free; only the final conversion to ``float`` rounds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .errors import (
    AlphabetMismatchError,
    DimensionMismatchError,
    InvalidSpecError,
    MetricMismatchError,
)

TWO64 = 2**64
MASK64 = TWO64 - 1
INV_TWO64 = 2.0**-64

DNA_ALPHABET = "ACGT"


class Metric(enum.Enum):
    TORUS_MAX = "torus_max"
    TORUS_EUCLID = "torus_euclid"
    SYMBOLIC = "symbolic"

    @property
    def is_torus(self) -> bool:
        return self is not Metric.SYMBOLIC


# ---------------------------------------------------------------------------
# symbolic words


@dataclass(frozen=True, eq=False)
class SymbolicSequence:
    alphabet_size: int
    symbols: np.ndarray

    def __post_init__(self):
        if self.alphabet_size < 1:
            raise InvalidSpecError("alphabet_size must be positive")
        arr = np.ascontiguousarray(self.symbols, dtype=np.int64)
        if arr.ndim != 1:
            raise InvalidSpecError("symbols must be one-dimensional")
        if arr.size and (arr.min() < 0 or arr.max() >= self.alphabet_size):
            raise InvalidSpecError(
                f"symbols must lie in [0, {self.alphabet_size})")
        arr.flags.writeable = False
        object.__setattr__(self, "symbols", arr)

    @property
    def length(self) -> int:
        return int(self.symbols.size)

    def __len__(self):
        return self.length

    def prefix(self, n: int) -> "SymbolicSequence":
        return SymbolicSequence(self.alphabet_size, self.symbols[:n])

    def __eq__(self, other):
        if not isinstance(other, SymbolicSequence):
            return NotImplemented
        return (self.alphabet_size == other.alphabet_size
                and np.array_equal(self.symbols, other.symbols))

    @classmethod
    def from_string(cls, text: str, alphabet: str = DNA_ALPHABET) -> "SymbolicSequence":
        lookup = {ch: i for i, ch in enumerate(alphabet)}
        try:
            symbols = [lookup[ch] for ch in text]
        except KeyError as exc:
            raise InvalidSpecError(f"symbol {exc.args[0]!r} not in alphabet {alphabet!r}")
        return cls(len(alphabet), np.array(symbols, dtype=np.int64))

    def to_string(self, alphabet: str | None = None) -> str:
        if alphabet is None:
            if self.alphabet_size > 10:
                raise InvalidSpecError("need an explicit alphabet for more than 10 symbols")
            alphabet = "0123456789"
        return "".join(alphabet[s] for s in self.symbols)


def agreement_length(x: SymbolicSequence, y: SymbolicSequence) -> int:
    """First index where ``x`` and ``y`` disagree (or the shorter length)."""
    if x.alphabet_size != y.alphabet_size:
        raise AlphabetMismatchError(
            f"alphabet sizes differ: {x.alphabet_size} vs {y.alphabet_size}")
    if x.length == 0 or y.length == 0:
        raise InvalidSpecError("sequences must be nonempty")
    L = min(x.length, y.length)
    diff = np.flatnonzero(x.symbols[:L] != y.symbols[:L])
    return int(diff[0]) if diff.size else L


def symbolic_distance(x: SymbolicSequence, y: SymbolicSequence) -> float:
    """``exp(-k)`` with ``k`` the length of the common prefix.

    Use :func:`agreement_length` directly when ``k`` is large enough for the
    exponential to underflow.
    """
    return math.exp(-agreement_length(x, y))


# ---------------------------------------------------------------------------
# fixed-point torus


def to_fixed(x) -> np.ndarray:
    """Map reals to 64-bit fixed point, reducing modulo one first."""
    x = np.asarray(x, dtype=np.float64)
    frac = x - np.floor(x)
    # frac * 2**64 is exact; values that round up to 1.0 wrap to 0
    scaled = np.ldexp(frac, 64)
    out = np.where(scaled >= 2.0**64, 0.0, scaled)
    return out.astype(np.uint64)


def from_fixed(v) -> np.ndarray:
    return np.asarray(v, dtype=np.uint64).astype(np.float64) * INV_TWO64


def circle_dist_fixed(a, b) -> np.ndarray:
    """Circle norm ``min(|a-b|, 1-|a-b|)`` in fixed point, elementwise."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    d = a - b
    return np.minimum(d, b - a)


@dataclass(frozen=True, eq=False)
class TorusPoint:
    coords: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.coords, dtype=np.uint64)).copy()
        if arr.ndim != 1 or arr.size < 1:
            raise DimensionMismatchError("a torus point needs d >= 1 coordinates")
        arr.flags.writeable = False
        object.__setattr__(self, "coords", arr)

    @property
    def dim(self) -> int:
        return int(self.coords.size)

    @classmethod
    def from_reals(cls, values) -> "TorusPoint":
        return cls(to_fixed(np.atleast_1d(values)))

    def to_reals(self) -> np.ndarray:
        return from_fixed(self.coords)

    def __eq__(self, other):
        if not isinstance(other, TorusPoint):
            return NotImplemented
        return np.array_equal(self.coords, other.coords)


def torus_distance(p: TorusPoint, q: TorusPoint, metric: Metric = Metric.TORUS_MAX) -> float:
    if p.dim != q.dim:
        raise DimensionMismatchError(f"dimensions differ: {p.dim} vs {q.dim}")
    if not metric.is_torus:
        raise MetricMismatchError("torus_distance needs a torus metric")
    d = circle_dist_fixed(p.coords, q.coords)
    if metric is Metric.TORUS_MAX:
        return float(d.max()) * INV_TWO64
    r = from_fixed(d)
    return math.sqrt(float(np.dot(r, r)))


@dataclass(frozen=True, eq=False)
class OrbitCloud:
    """Orbit ``points[i] = T^i x`` as an ``(n, d)`` array of fixed-point words."""

    points: np.ndarray
    metric: Metric = Metric.TORUS_MAX
    origin: str = ""

    def __post_init__(self):
        arr = np.asarray(self.points, dtype=np.uint64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise DimensionMismatchError("points must be an (n, d) array with d >= 1")
        if not self.metric.is_torus:
            raise MetricMismatchError("orbit clouds live on the torus")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "points", arr)

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def __len__(self):
        return self.n

    def point(self, i: int) -> TorusPoint:
        return TorusPoint(self.points[i])

    def head(self, n: int) -> "OrbitCloud":
        return OrbitCloud(self.points[:n], self.metric, self.origin)


def check_compatible(X: OrbitCloud, Y: OrbitCloud) -> None:
    if X.metric is not Y.metric:
        raise MetricMismatchError(f"metrics differ: {X.metric.value} vs {Y.metric.value}")
    if X.dim != Y.dim:
        raise DimensionMismatchError(f"dimensions differ: {X.dim} vs {Y.dim}")


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True, eq=False)
class Schedule:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.int64).copy()
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidSpecError("schedule must be a nonempty 1-d array")
        if arr[0] < 2:
            raise InvalidSpecError("schedule values must start at 2 or more")
        if np.any(np.diff(arr) <= 0):
            raise InvalidSpecError("schedule must be strictly increasing")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return int(self.values.size)

    def __iter__(self):
        return (int(v) for v in self.values)

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    @property
    def max(self) -> int:
        return int(self.values[-1])


def geometric_schedule(n_min: int, n_max: int, ratio: float = 2.0) -> Schedule:
    """``n_min * ratio**j`` rounded, deduplicated and capped at ``n_max``.

    Both endpoints are always present.  A geometric point closer to ``n_max``
    than half a step in log space is absorbed into ``n_max`` so the last gap
    is never a sliver.
    """
    if not (2 <= n_min < n_max):
        raise InvalidSpecError("need 2 <= n_min < n_max")
    if not ratio > 1:
        raise InvalidSpecError("ratio must exceed 1")
    values = [n_min]
    j = 1
    while True:
        v = int(round(n_min * ratio**j))
        if v >= n_max or n_max / v < math.sqrt(ratio):
            break
        if v > values[-1]:
            values.append(v)
        j += 1
    values.append(n_max)
    return Schedule(np.array(values, dtype=np.int64))


def upper_half(values: np.ndarray, min_points: int = 3) -> np.ndarray:
    """Index mask for the upper half of a schedule in log space."""
    values = np.asarray(values, dtype=np.float64)
    logs = np.log(values)
    mid = 0.5 * (logs[0] + logs[-1])
    mask = logs >= mid - 1e-12
    if mask.sum() < min_points:
        mask = np.zeros(values.size, dtype=bool)
        mask[-min(min_points, values.size):] = True
    return mask


# ---------------------------------------------------------------------------
# random numbers
#
# xoshiro256** (Blackman & Vigna) seeded through splitmix64.  Both are defined
# on unsigned 64-bit words only, so streams are identical on every platform.

_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(new_state, output)``."""
    state = (state + _GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """Seed of the ``index``-th child stream of ``master``."""
    _, out = splitmix64((master ^ ((index + 1) * _GOLDEN_GAMMA)) & MASK64)
    _, out = splitmix64(out)
    return out


@numba.njit(cache=True)
def _rotl(x, k):
    return (x << numba.uint64(k)) | (x >> numba.uint64(64 - k))


@numba.njit(cache=True)
def _xoshiro_fill(state, out):
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for i in range(out.size):
        out[i] = _rotl(s1 * numba.uint64(5), 7) * numba.uint64(9)
        t = s1 << numba.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


class Rng:
    """Deterministic xoshiro256** stream.  One owner per stream; use
    :meth:`split` to hand independent streams to workers."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        s = self.seed
        words = []
        for _ in range(4):
            s, out = splitmix64(s)
            words.append(out)
        self.state = np.array(words, dtype=np.uint64)

    def split(self, index: int) -> "Rng":
        return Rng(derive_seed(self.seed, index))

    def next_u64(self, n: int) -> np.ndarray:
        out = np.empty(int(n), dtype=np.uint64)
        _xoshiro_fill(self.state, out)
        return out

    def random(self, n: int) -> np.ndarray:
        """Uniform doubles on [0, 1) with 53 random bits each."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_fixed(self, n: int) -> np.ndarray:
        """Uniform 64-bit fixed-point words (exactly uniform on the grid)."""
        return self.next_u64(n)

    def digits(self, base: int, n: int) -> np.ndarray:
        """``n`` uniform digits in ``[0, base)``."""
        if base < 2:
            raise InvalidSpecError("base must be at least 2")
        if base & (base - 1) == 0:
            shift = np.uint64(64 - (base.bit_length() - 1))
            return (self.next_u64(n) >> shift).astype(np.int64)
        u = self.random(n)
        return np.minimum((u * base).astype(np.int64), base - 1)

    def bits(self, n: int) -> np.ndarray:
        """``n`` fair bits, most significant bit of each word first."""
        words = self.next_u64((int(n) + 63) // 64)
        raw = words.astype(">u8").view(np.uint8)
        return np.unpackbits(raw)[:n]

    def choice(self, probs: Sequence[float], n: int) -> np.ndarray:
        cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, self.random(n), side="right")
        return np.minimum(idx, cdf.size - 1).astype(np.int64)
