"""Continued fractions of 128-bit fixed-point angles, angles with a chosen
irrationality exponent, and the two-exponent scaling of ``m_n`` for circle
rotations.

Angles are integers ``t`` standing for ``t / 2**128``.  The shortest
distance between the orbits of ``x`` and ``y`` under ``x -> x + theta``
only depends on ``delta = x - y``:
``m_n = min over |j| < n of ||delta + j theta||``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import isqrt

import numba
import numpy as np

from .core import Rng, Schedule, geometric_schedule, upper_half
from .errors import DegenerateError, InvalidSpecError

FRAC_BITS = 128
ONE = 1 << FRAC_BITS
MASK128 = ONE - 1
DESIGN_Q_CAP = 1 << 60


def golden_theta() -> int:
    """``(sqrt 5 - 1) / 2`` rounded down to 128-bit fixed point."""
    return (isqrt(5 << (2 * FRAC_BITS)) - ONE) >> 1


def sqrt2_theta() -> int:
    """``sqrt 2 - 1`` rounded down to 128-bit fixed point."""
    return isqrt(2 << (2 * FRAC_BITS)) - ONE


def theta_from_fraction(p: int, q: int) -> int:
    return (p << FRAC_BITS) // q


def theta_to_hex(theta: int) -> str:
    return f"0x{theta:032x}"


def theta_from_hex(text: str) -> int:
    value = int(text, 16)
    if not 0 <= value < ONE:
        raise InvalidSpecError("angle must fit in 128 bits")
    return value


def circle_norm128(v: int) -> int:
    v &= MASK128
    return min(v, ONE - v)


def fixed128_to_float(v: int) -> float:
    return (v >> 64) * 2.0**-64 + (v & (2**64 - 1)) * 2.0**-128


# ---------------------------------------------------------------------------
# continued fractions


@dataclass(frozen=True)
class ContinuedFraction:
    partial_quotients: tuple  # a_0, a_1, ..., a_K
    p: tuple
    q: tuple
    truncated: bool = False  # stopped because q_k**2 would exceed 2**128
    terminated: bool = False  # expansion of the stored rational ended

    def __post_init__(self):
        a, p, q = self.partial_quotients, self.p, self.q
        for k in range(2, len(a)):
            if q[k] != a[k] * q[k - 1] + q[k - 2] or p[k] != a[k] * p[k - 1] + p[k - 2]:
                raise InvalidSpecError(f"convergent recurrence broken at level {k}")

    @property
    def levels(self) -> int:
        return len(self.partial_quotients)

    def value(self) -> Fraction:
        return Fraction(self.p[-1], self.q[-1])


def convergents(quotients) -> tuple[list, list]:
    p_prev, p = 1, quotients[0]
    q_prev, q = 0, 1
    ps, qs = [p], [q]
    for a in quotients[1:]:
        p_prev, p = p, a * p + p_prev
        q_prev, q = q, a * q + q_prev
        ps.append(p)
        qs.append(q)
    return ps, qs


def cf_from_quotients(quotients, truncated=False, terminated=False) -> ContinuedFraction:
    quotients = [int(a) for a in quotients]
    if any(a < 1 for a in quotients[1:]):
        raise InvalidSpecError("partial quotients past a_0 must be positive")
    ps, qs = convergents(quotients)
    return ContinuedFraction(tuple(quotients), tuple(ps), tuple(qs), truncated, terminated)


def cf_expand(theta: int, k_max: int = 200) -> ContinuedFraction:
    """Continued fraction of ``theta / 2**128``.

    Levels are kept while ``q_k**2 <= 2**128``; past that the quotients
    describe the 128-bit representative rather than the angle it stands
    for, and ``truncated`` is set.
    """
    if theta <= 0 or theta >= ONE:
        raise InvalidSpecError("theta must lie strictly inside (0, 1)")
    if k_max < 1:
        raise InvalidSpecError("k_max must be at least 1")
    num, den = theta, ONE
    quotients = [0]  # a_0 = 0 for theta in (0, 1)
    num, den = den, num
    q_prev, q = 0, 1
    truncated = terminated = False
    while len(quotients) <= k_max:
        a, rem = divmod(num, den)
        q_next = a * q + q_prev
        if q_next * q_next > ONE:
            truncated = True
            break
        quotients.append(a)
        q_prev, q = q, q_next
        if rem == 0:
            terminated = True
            break
        num, den = den, rem
    return cf_from_quotients(quotients, truncated, terminated)


def design_theta(eta_target: float, k_max: int = 64) -> tuple[int, ContinuedFraction]:
    """Angle whose convergent denominators grow like ``q_{k+1} ~ q_k**eta``.

    Each new quotient is ``a_{k+1} = max(1, floor(q_k**(eta - 1)))``, so
    ``q_{k+1} = a_{k+1} q_k + q_{k-1}`` sits just above ``q_k**eta``.
    Levels stop before ``q_k`` would exceed ``2**60``.
    """
    if not eta_target >= 1:
        raise InvalidSpecError("eta_target must be at least 1")
    quotients = [0]
    q_prev, q = 0, 1
    e = float(eta_target) - 1.0
    while len(quotients) <= k_max:
        if e.is_integer():
            a = q ** int(e)
        else:
            a = int(math.floor(math.exp(e * math.log(q))))
        a = max(1, a)
        q_next = a * q + q_prev
        if q_next > DESIGN_Q_CAP:
            break
        quotients.append(a)
        q_prev, q = q, q_next
    if len(quotients) - 1 < 4:
        raise DegenerateError(
            f"eta_target={eta_target} leaves fewer than 4 levels below 2**60",
            {"levels": len(quotients) - 1})
    # the design is the complete expansion of the rational p_K / q_K
    cf = cf_from_quotients(quotients, terminated=True)
    theta = theta_from_fraction(cf.p[-1], cf.q[-1])
    return theta, cf


@dataclass(frozen=True)
class EtaEstimate:
    eta: float
    per_k: np.ndarray
    k_used: int

    def __post_init__(self):
        if self.eta < 1:
            object.__setattr__(self, "eta", 1.0)


def eta_estimate(cf: ContinuedFraction) -> EtaEstimate:
    """Irrationality exponent as the running maximum of
    ``log q_{k+1} / log q_k`` over the last half of the levels.  Levels with
    ``q_k = 1`` carry no information and are reported as ``nan``."""
    qs = cf.q
    if len(qs) < 3:
        raise DegenerateError("need at least 3 convergents")
    per_k = np.full(len(qs) - 1, np.nan)
    for k in range(len(qs) - 1):
        if qs[k] > 1:
            per_k[k] = math.log(qs[k + 1]) / math.log(qs[k])
    valid = np.flatnonzero(~np.isnan(per_k))
    if valid.size == 0:
        raise DegenerateError("no convergent denominator exceeds 1")
    tail = valid[valid.size // 2:]
    return EtaEstimate(float(np.max(per_k[tail])), per_k, int(tail.size))


def check_convergent_bounds(theta: int, cf: ContinuedFraction) -> list[int]:
    """Levels ``k >= 1`` violating ``1/(2 q_{k+1}) < ||q_k theta|| <= 1/q_{k+1}``
    or ``|theta - p_k/q_k| < 1/(q_k q_{k+1})``; exact rational arithmetic.
    (At ``k = 0`` the lower bound fails whenever ``a_1 = 1``.)

    For a terminated expansion of ``p_K / q_K`` the last level meets the
    upper bound with equality; when ``theta`` only rounds that rational,
    the rounding decides the comparison, so that level is skipped.
    """
    bad = []
    th = Fraction(theta, ONE)
    last = len(cf.q) - 1
    if cf.terminated and theta * cf.q[-1] != cf.p[-1] * ONE:
        last -= 1
    for k in range(1, last):
        qk, qn = cf.q[k], cf.q[k + 1]
        norm = circle_norm128(qk * theta)
        if not (norm * 2 * qn > ONE and norm * qn <= ONE):
            bad.append(k)
            continue
        if not abs(th - Fraction(cf.p[k], qk)) < Fraction(1, qk * qn):
            bad.append(k)
    return bad


# ---------------------------------------------------------------------------
# shortest distance for rotations


def rotation_mindist_exact_fixed(theta: int, delta: int, n: int) -> int:
    """``min over |j| < n of ||delta + j theta||`` as a 128-bit integer."""
    if n < 1:
        raise InvalidSpecError("n must be positive")
    best = circle_norm128(delta)
    up = down = delta
    for _ in range(1, n):
        up = (up + theta) & MASK128
        down = (down - theta) & MASK128
        best = min(best, circle_norm128(up), circle_norm128(down))
    return best


def rotation_mindist_exact(theta: int, delta: int, n: int) -> float:
    return fixed128_to_float(rotation_mindist_exact_fixed(theta, delta, n))


@numba.njit(cache=True, inline="always")
def _add128(ah, al, bh, bl):
    lo = al + bl
    carry = numba.uint64(1) if lo < al else numba.uint64(0)
    return ah + bh + carry, lo


@numba.njit(cache=True, inline="always")
def _sub128(ah, al, bh, bl):
    lo = al - bl
    borrow = numba.uint64(1) if al < bl else numba.uint64(0)
    return ah - bh - borrow, lo


@numba.njit(cache=True, inline="always")
def _norm128(h, l):
    if h >= numba.uint64(1) << numba.uint64(63):
        # 2**128 - v
        nh = ~h
        nl = ~l
        nl2 = nl + numba.uint64(1)
        if nl2 == 0:
            nh += numba.uint64(1)
        return nh, nl2
    return h, l


@numba.njit(cache=True)
def _running_min(th, tl, dh, dl, n_max):
    """Dense ``m_n`` for ``n = 1 .. n_max`` as (hi, lo) words."""
    out_h = np.empty(n_max, dtype=np.uint64)
    out_l = np.empty(n_max, dtype=np.uint64)
    bh, bl = _norm128(dh, dl)
    uh, ul = dh, dl
    vh, vl = dh, dl
    out_h[0] = bh
    out_l[0] = bl
    for n in range(1, n_max):
        uh, ul = _add128(uh, ul, th, tl)
        vh, vl = _sub128(vh, vl, th, tl)
        ch, cl = _norm128(uh, ul)
        if ch < bh or (ch == bh and cl < bl):
            bh, bl = ch, cl
        ch, cl = _norm128(vh, vl)
        if ch < bh or (ch == bh and cl < bl):
            bh, bl = ch, cl
        out_h[n] = bh
        out_l[n] = bl
    return out_h, out_l


def rotation_mindist_series(theta: int, delta: int, n_max: int) -> np.ndarray:
    """``m_n`` for every ``n`` in ``1 .. n_max`` (index ``n - 1``), as floats."""
    hi, lo = _running_min(np.uint64(theta >> 64), np.uint64(theta & (2**64 - 1)),
                          np.uint64((delta & MASK128) >> 64),
                          np.uint64(delta & (2**64 - 1)), int(n_max))
    return hi.astype(np.float64) * 2.0**-64 + lo.astype(np.float64) * 2.0**-128


def convergent_probes(cf: ContinuedFraction, n_lo: int, n_max: int, steps: int = 16) -> np.ndarray:
    """Times ``ceil(q_k**s)`` for ``s`` running from 1 up to
    ``log q_{k+1} / log q_k``: the stretch between consecutive convergent
    denominators where the orbit has not yet refilled the gaps left at
    scale ``1 / q_k``."""
    probes = set()
    qs = cf.q
    for k in range(len(qs) - 1):
        qk, qn = qs[k], qs[k + 1]
        if qk < 2 or qk > n_max:
            continue
        top = math.log(qn) / math.log(qk)
        for s in np.linspace(1.0, top, steps):
            n = min(int(math.ceil(qk**s)), n_max, qn)
            if n >= n_lo:
                probes.add(n)
    return np.array(sorted(probes), dtype=np.int64)


@dataclass(frozen=True)
class RotationTrial:
    delta: int
    excluded: bool
    max_exponent: float  # over the geometric schedule
    min_exponent: float  # over the convergent probes
    schedule_exponents: np.ndarray = field(repr=False)
    probe_n: np.ndarray = field(repr=False)
    probe_exponents: np.ndarray = field(repr=False)
    schedule_m: np.ndarray = field(default=None, repr=False)
    probe_m: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class RotationReport:
    theta: int
    n_max: int
    eta: EtaEstimate
    schedule: Schedule
    trials: list

    def _valid(self):
        return [t for t in self.trials if not t.excluded]

    @property
    def median_max_exponent(self) -> float:
        return float(np.median([t.max_exponent for t in self._valid()]))

    @property
    def median_min_exponent(self) -> float:
        return float(np.median([t.min_exponent for t in self._valid()]))

    @property
    def targets(self) -> tuple[float, float]:
        """Theoretical (liminf, limsup) exponents ``(1 / eta, 1)``."""
        return 1.0 / self.eta.eta, 1.0


def _exponents(m, n):
    with np.errstate(divide="ignore"):
        return np.log(m) / -np.log(n.astype(np.float64))


def rotation_trial(theta: int, cf: ContinuedFraction, delta: int, n_max: int,
                   schedule: Schedule, probes: np.ndarray) -> RotationTrial:
    if delta & MASK128 == 0:
        empty = np.array([])
        return RotationTrial(0, True, math.nan, math.nan, empty, empty.astype(np.int64), empty)
    series = rotation_mindist_series(theta, delta, n_max)
    sched_m = series[schedule.values - 1]
    probe_m = series[probes - 1] if probes.size else np.array([])
    sched_exp = _exponents(sched_m, schedule.values)
    mask = upper_half(schedule.values)
    probe_exp = _exponents(probe_m, probes) if probes.size else np.array([])
    return RotationTrial(
        delta, False, float(np.max(sched_exp[mask])),
        float(np.min(probe_exp)) if probe_exp.size else math.nan,
        sched_exp, probes, probe_exp, sched_m, probe_m)


def rotation_scaling(theta: int, n_max: int, trials: int, rng: Rng,
                     deltas=None) -> RotationReport:
    """Exponent series ``log m_n / -log n`` for random offsets ``delta``.

    The limsup exponent is estimated by the largest value over the upper
    half of a geometric schedule, the liminf exponent by the smallest value
    over :func:`convergent_probes` in the same range.
    """
    if n_max < 1000:
        raise InvalidSpecError("n_max must be at least 1000")
    if trials < 1:
        raise InvalidSpecError("need at least one trial")
    cf = cf_expand(theta)
    eta = eta_estimate(cf)
    schedule = geometric_schedule(16, n_max, 2.0)
    n_lo = int(schedule.values[upper_half(schedule.values)][0])
    probes = convergent_probes(cf, n_lo, n_max)
    if deltas is None:
        words = rng.next_u64(2 * trials)
        deltas = [(int(words[2 * t]) << 64) | int(words[2 * t + 1]) for t in range(trials)]
    results = [rotation_trial(theta, cf, int(d), n_max, schedule, probes) for d in deltas]
    if all(t.excluded for t in results):
        raise DegenerateError("every trial had delta = 0")
    return RotationReport(theta, n_max, eta, schedule, results)
