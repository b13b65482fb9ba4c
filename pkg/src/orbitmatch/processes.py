"""Stochastic sources of symbolic sequences and their exact collision
(order-2 Renyi) entropies.

All entropies are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import Rng, SymbolicSequence
from .errors import DegenerateError, InvalidSpecError, NonConvergenceError

PROB_TOL = 1e-12
MAX_POWER_ITER = 100_000


def _check_probs(p, what="probability vector"):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise InvalidSpecError(f"{what} must be a nonempty vector")
    if np.any(p < 0) or np.any(p > 1):
        raise InvalidSpecError(f"{what} entries must lie in [0, 1]")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise InvalidSpecError(f"{what} must sum to 1 (got {p.sum()!r})")
    return p


def _check_transition(P):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise InvalidSpecError("transition must be a square matrix")
    for i, row in enumerate(P):
        _check_probs(row, f"transition row {i}")
    return P


@dataclass(frozen=True)
class IID:
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(v) for v in _check_probs(self.probs)))

    @property
    def alphabet_size(self):
        return len(self.probs)


@dataclass(frozen=True)
class Markov:
    transition: tuple
    initial: tuple | None = None

    def __post_init__(self):
        P = _check_transition(self.transition)
        object.__setattr__(self, "transition", tuple(tuple(float(v) for v in row) for row in P))
        if self.initial is not None:
            init = _check_probs(self.initial, "initial distribution")
            if init.size != P.shape[0]:
                raise InvalidSpecError("initial distribution has the wrong size")
            object.__setattr__(self, "initial", tuple(float(v) for v in init))

    @property
    def alphabet_size(self):
        return len(self.transition)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.transition, dtype=np.float64)


@dataclass(frozen=True)
class BinaryRenewal:
    """Indicator of visits to 0 by the chain that resets to 0 with
    probability ``q[i]`` from state ``i`` and otherwise climbs to ``i + 1``.
    States past the end of ``q`` all use ``tail_value``."""

    q: tuple
    tail_value: float

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).ravel()
        vals = np.append(q, float(self.tail_value))
        if np.any(vals <= 0) or np.any(vals >= 1):
            raise InvalidSpecError("renewal probabilities must lie strictly in (0, 1)")
        object.__setattr__(self, "q", tuple(float(v) for v in q))
        object.__setattr__(self, "tail_value", float(self.tail_value))

    @property
    def alphabet_size(self):
        return 2

    @property
    def gap(self) -> float:
        """The uniform bound ``a`` with ``a <= q_i <= 1 - a``."""
        vals = np.append(np.asarray(self.q), self.tail_value)
        return float(min(vals.min(), 1.0 - vals.max()))

    def lumped_transition(self) -> np.ndarray:
        """Hidden chain on ``0..K`` with every state ``>= K`` merged into ``K``.

        Merging is exact for the emitted process: all those states reset
        with the same probability.
        """
        K = len(self.q)
        Q = np.zeros((K + 1, K + 1))
        for i, qi in enumerate(self.q):
            Q[i, 0] = qi
            Q[i, i + 1] = 1.0 - qi
        Q[K, 0] += self.tail_value
        Q[K, K] += 1.0 - self.tail_value
        return Q


ProcessSpec = IID | Markov | BinaryRenewal


@dataclass(frozen=True)
class EntropyValue:
    h2: float
    method: str  # "exact" or "estimated"
    k_used: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __float__(self):
        return self.h2


# ---------------------------------------------------------------------------


def is_primitive(P: np.ndarray) -> bool:
    """Irreducible and aperiodic: some power is entrywise positive.

    Wielandt's bound ``(s - 1)**2 + 1`` on the exponent is reached by
    repeated squaring of the zero pattern.
    """
    s = P.shape[0]
    A = (np.asarray(P) > 0).astype(np.int64)
    bound = (s - 1) ** 2 + 1
    power = 1
    while power < bound:
        A = (A @ A > 0).astype(np.int64)
        power *= 2
    return bool(A.all())


def stationary_distribution(transition) -> np.ndarray:
    P = _check_transition(transition)
    if not is_primitive(P):
        raise NonConvergenceError("chain is reducible or periodic: no unique limit law")
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(MAX_POWER_ITER):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < PROB_TOL:
            return nxt
        pi = nxt
    raise NonConvergenceError("power iteration for the stationary law did not converge")


def perron_root(A: np.ndarray) -> float:
    """Largest eigenvalue of a nonnegative primitive matrix by power iteration."""
    A = np.asarray(A, dtype=np.float64)
    v = np.ones(A.shape[0]) / A.shape[0]
    lam = 0.0
    for _ in range(MAX_POWER_ITER):
        w = A @ v
        new_lam = w.sum() / v.sum()
        w /= w.sum()
        if abs(new_lam - lam) <= PROB_TOL * new_lam and np.abs(w - v).max() < PROB_TOL:
            return float(new_lam)
        v, lam = w, new_lam
    raise NonConvergenceError("power iteration for the Perron root did not converge")


def exact_h2_iid(probs) -> EntropyValue:
    p = _check_probs(probs)
    if np.any(p >= 1.0):
        raise DegenerateError("degenerate distribution has zero collision entropy")
    return EntropyValue(-math.log(float(np.dot(p, p))), "exact")


def exact_h2_markov(transition) -> EntropyValue:
    P = _check_transition(transition)
    if not is_primitive(P):
        raise DegenerateError("periodic or reducible chain: collision entropy not defined here")
    lam = perron_root(P * P)
    if lam >= 1.0 - PROB_TOL:
        raise DegenerateError("Perron root of the squared matrix is 1: zero entropy")
    return EntropyValue(-math.log(lam), "exact", extra={"perron_root": lam})


def exact_h2(spec: ProcessSpec) -> EntropyValue | None:
    """Closed-form entropy where one is known; ``None`` for renewal sources."""
    if isinstance(spec, IID):
        return exact_h2_iid(spec.probs)
    if isinstance(spec, Markov):
        return exact_h2_markov(spec.matrix)
    return None


# ---------------------------------------------------------------------------
# sampling


@numba.njit(cache=True)
def _walk(cdf, start, u, out):
    s = cdf.shape[0]
    state = start
    out[0] = state
    for i in range(1, out.size):
        x = u[i - 1]
        nxt = s - 1
        for j in range(s):
            if x < cdf[state, j]:
                nxt = j
                break
        state = nxt
        out[i] = state


@numba.njit(cache=True)
def _renewal(q, tail, start, u, out):
    K = q.size
    y = start
    out[0] = 1 if y == 0 else 0
    for i in range(1, out.size):
        reset = q[y] if y < K else tail
        if u[i - 1] < reset:
            y = 0
        elif y < K:
            y += 1
        out[i] = 1 if y == 0 else 0


def _row_cdf(P):
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    return np.ascontiguousarray(cdf)


def sample_process(spec: ProcessSpec, n: int, rng: Rng, burn_in: int = 0) -> SymbolicSequence:
    """Draw ``n`` symbols.  Markov and renewal chains start from their
    stationary law unless ``spec.initial`` is given; ``burn_in`` steps are
    discarded first."""
    if n < 1:
        raise InvalidSpecError("n must be positive")
    total = n + burn_in
    if isinstance(spec, IID):
        out = rng.choice(spec.probs, total)
        return SymbolicSequence(spec.alphabet_size, out[burn_in:])
    if isinstance(spec, Markov):
        P = spec.matrix
        init = spec.initial if spec.initial is not None else stationary_distribution(P)
        start = int(rng.choice(init, 1)[0])
        u = rng.random(total - 1)
        out = np.empty(total, dtype=np.int64)
        _walk(_row_cdf(P), start, u, out)
        return SymbolicSequence(spec.alphabet_size, out[burn_in:])
    if isinstance(spec, BinaryRenewal):
        pi = stationary_distribution(spec.lumped_transition())
        start = int(rng.choice(pi, 1)[0])
        u = rng.random(total - 1)
        out = np.empty(total, dtype=np.int64)
        _renewal(np.asarray(spec.q, dtype=np.float64), spec.tail_value, start, u, out)
        return SymbolicSequence(2, out[burn_in:])
    raise InvalidSpecError(f"unknown process spec {spec!r}")
