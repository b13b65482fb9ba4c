import math
from decimal import Decimal, localcontext
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitmatch.core import (
    Metric,
    OrbitCloud,
    Rng,
    Schedule,
    SymbolicSequence,
    TorusPoint,
    agreement_length,
    check_compatible,
    derive_seed,
    from_fixed,
    geometric_schedule,
    splitmix64,
    symbolic_distance,
    to_fixed,
    torus_distance,
    upper_half,
)
from orbitmatch.errors import (
    AlphabetMismatchError,
    DimensionMismatchError,
    InvalidSpecError,
    MetricMismatchError,
)

M64 = (1 << 64) - 1


def seq(text, sigma=2):
    return SymbolicSequence(sigma, [int(c) for c in text])


# -- symbolic sequences ------------------------------------------------------


def test_sequence_invariants():
    s = SymbolicSequence(3, [0, 2, 1])
    assert s.length == len(s) == 3
    with pytest.raises(InvalidSpecError):
        SymbolicSequence(2, [0, 2])
    with pytest.raises(InvalidSpecError):
        SymbolicSequence(2, [-1])
    with pytest.raises(ValueError):
        s.symbols[0] = 1


def test_dna_round_trip():
    text = "ACAATGAGAGGATGACCTTG"
    s = SymbolicSequence.from_string(text)
    assert s.alphabet_size == 4
    assert s.to_string("ACGT") == text
    assert SymbolicSequence(2, [1, 0]).to_string() == "10"


def test_symbolic_distance_examples():
    assert symbolic_distance(seq("010"), seq("011")) == math.exp(-2)
    assert symbolic_distance(seq("0101"), seq("0101")) == math.exp(-4)
    assert symbolic_distance(seq("1"), seq("0")) == 1.0
    with pytest.raises(AlphabetMismatchError):
        symbolic_distance(seq("01"), SymbolicSequence(3, [0, 1]))


def scan_agreement(a, b):
    k = 0
    while k < min(len(a), len(b)) and a[k] == b[k]:
        k += 1
    return k


def test_symbolic_distance_random_scan_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        a = rng.integers(0, 3, 12)
        b = a.copy()
        cut = rng.integers(0, 13)
        b[cut:] = rng.integers(0, 3, 12 - cut)
        x, y = SymbolicSequence(3, a), SymbolicSequence(3, b)
        k = scan_agreement(a.tolist(), b.tolist())
        assert agreement_length(x, y) == k
        assert symbolic_distance(x, y) == math.exp(-k)


words = st.lists(st.integers(0, 2), min_size=1, max_size=20)


@given(words, words, words)
def test_symbolic_metric_axioms(a, b, c):
    x, y, z = (SymbolicSequence(3, w) for w in (a, b, c))
    assert symbolic_distance(x, y) == symbolic_distance(y, x)
    # ultrametric, hence triangle inequality
    assert symbolic_distance(x, z) <= max(symbolic_distance(x, y), symbolic_distance(y, z)) + 1e-15


@given(words, words, st.integers(0, 20))
def test_prefix_agreement_iff(a, b, k):
    x, y = SymbolicSequence(3, a), SymbolicSequence(3, b)
    L = min(len(a), len(b))
    if k <= L:
        agree = a[:k] == b[:k]
        assert (symbolic_distance(x, y) <= math.exp(-k)) == agree


# -- torus ---------------------------------------------------------------------


def test_torus_distance_examples():
    p, q = TorusPoint.from_reals([0.1]), TorusPoint.from_reals([0.9])
    assert torus_distance(p, q) == pytest.approx(0.2, abs=1e-15)
    assert torus_distance(p, p) == 0.0
    with pytest.raises(DimensionMismatchError):
        torus_distance(p, TorusPoint.from_reals([0.1, 0.2]))
    with pytest.raises(MetricMismatchError):
        torus_distance(p, q, Metric.SYMBOLIC)


def exact_circle(a, b):
    d = Fraction(a - b, 1 << 64) % 1
    return min(d, 1 - d)


def test_torus_distance_rational_oracle():
    rng = Rng(11)
    for _ in range(100):
        a, b = rng.next_u64(2), rng.next_u64(2)
        p, q = TorusPoint(a), TorusPoint(b)
        gaps = [exact_circle(int(x), int(y)) for x, y in zip(a, b)]
        assert abs(torus_distance(p, q, Metric.TORUS_MAX) - float(max(gaps))) < 2**-60
        # sqrt is irrational in general: compare to a 50-digit value at 2 ulp
        with localcontext() as ctx:
            ctx.prec = 50
            s = sum(Decimal(g.numerator) / Decimal(g.denominator) for g in (g * g for g in gaps))
            euclid = float(s.sqrt())
        assert abs(torus_distance(p, q, Metric.TORUS_EUCLID) - euclid) <= 2 * math.ulp(euclid)


coords = st.lists(st.integers(0, M64), min_size=2, max_size=2)


@given(coords, coords, coords, st.sampled_from([Metric.TORUS_MAX, Metric.TORUS_EUCLID]))
def test_torus_metric_axioms(a, b, c, metric):
    p, q, r = TorusPoint(a), TorusPoint(b), TorusPoint(c)
    assert torus_distance(p, q, metric) == torus_distance(q, p, metric)
    assert torus_distance(p, r, metric) <= (torus_distance(p, q, metric)
                                            + torus_distance(q, r, metric) + 1e-15)


def test_fixed_point_conversion():
    v = to_fixed([0.0, 0.25, 0.5, 1.25, -0.25, 1 - 2**-52])
    assert v.tolist() == [0, 1 << 62, 1 << 63, 1 << 62, 3 << 62, (1 << 64) - (1 << 12)]
    assert from_fixed(v[:3]).tolist() == [0.0, 0.25, 0.5]
    # values rounding up to 1.0 wrap to 0
    assert to_fixed([np.nextafter(1.0, 0)])[0] == (1 << 64) - (1 << 11)


def test_orbit_cloud_validation():
    c = OrbitCloud(np.arange(6, dtype=np.uint64).reshape(3, 2))
    assert (c.n, c.dim) == (3, 2)
    assert c.head(2).n == 2
    assert c.point(1) == TorusPoint([2, 3])
    with pytest.raises(MetricMismatchError):
        OrbitCloud(np.zeros((2, 1), np.uint64), Metric.SYMBOLIC)
    with pytest.raises(DimensionMismatchError):
        check_compatible(c, OrbitCloud(np.zeros((2, 1), np.uint64)))
    with pytest.raises(MetricMismatchError):
        check_compatible(c, OrbitCloud(np.zeros((2, 2), np.uint64), Metric.TORUS_EUCLID))


# -- schedules ---------------------------------------------------------------


def test_geometric_schedule_examples():
    assert geometric_schedule(4, 32, 2.0).values.tolist() == [4, 8, 16, 32]
    s = geometric_schedule(10, 10**5, 2.0)
    assert len(s) == 14 and s.max == 100000
    assert geometric_schedule(2, 3, 10.0).values.tolist() == [2, 3]


def test_geometric_schedule_enumeration_oracle():
    # direct enumeration: powers below n_max, then n_max (last sliver absorbed)
    vals = [10 * 2**j for j in range(20) if 10 * 2**j < 10**5]
    if 10**5 / vals[-1] < math.sqrt(2):
        vals.pop()
    assert geometric_schedule(10, 10**5, 2.0).values.tolist() == vals + [10**5]


@given(st.integers(2, 1000), st.integers(1, 10**6), st.floats(1.05, 10))
def test_geometric_schedule_properties(n_min, span, ratio):
    n_max = n_min + span
    s = geometric_schedule(n_min, n_max, ratio)
    v = s.values
    assert v[0] == n_min and v[-1] == n_max
    assert np.all(np.diff(v) > 0)


def test_schedule_invariants():
    with pytest.raises(InvalidSpecError):
        Schedule([1, 2])
    with pytest.raises(InvalidSpecError):
        Schedule([4, 4])
    with pytest.raises(InvalidSpecError):
        geometric_schedule(5, 5)
    with pytest.raises(InvalidSpecError):
        geometric_schedule(2, 5, 1.0)


def test_upper_half():
    v = np.array([16, 32, 64, 128, 256])
    assert upper_half(v).tolist() == [False, False, True, True, True]
    assert upper_half(np.array([2, 3, 4])).all()


# -- random numbers ------------------------------------------------------------


def py_splitmix(state):
    state = (state + 0x9E3779B97F4A7C15) & M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return state, z ^ (z >> 31)


def py_xoshiro(seed, n):
    """Reference xoshiro256** written from the published algorithm."""
    rotl = lambda x, k: ((x << k) | (x >> (64 - k))) & M64  # noqa: E731
    s, st_ = seed, []
    for _ in range(4):
        s, out = py_splitmix(s)
        st_.append(out)
    s0, s1, s2, s3 = st_
    res = []
    for _ in range(n):
        res.append((rotl((s1 * 5) & M64, 7) * 9) & M64)
        t = (s1 << 17) & M64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = rotl(s3, 45)
    return res


GOLDEN_SEED0 = [
    0x99EC5F36CB75F2B4, 0xBF6E1F784956452A, 0x1A5F849D4933E6E0, 0x6AA594F1262D2D2C,
    0xBBA5AD4A1F842E59, 0xFFEF8375D9EBCACA, 0x6C160DEED2F54C98, 0x8920AD648FC30A3F,
    0xDB032C0BA7539731, 0xEB3A475A3E749A3D, 0x1D42993FA43F2A54, 0x11361BF526A14BB5,
    0x1B4F07A5AB3D8E9C, 0xA7A3257F6986DB7F, 0x7EFDAA95605DFC9C, 0x4BDE97C0A78EAAB8,
]


def test_splitmix_reference_value():
    assert splitmix64(0) == (0x9E3779B97F4A7C15, 0xE220A8397B1DCDAF)


def test_rng_golden_prefix():
    assert [int(v) for v in Rng(0).next_u64(16)] == GOLDEN_SEED0


@pytest.mark.parametrize("seed", [0, 1, 42, 2**63 + 5, M64])
def test_rng_matches_python_oracle(seed):
    assert [int(v) for v in Rng(seed).next_u64(40)] == py_xoshiro(seed, 40)


def test_rng_stream_continuity_and_determinism():
    a = Rng(9)
    first = np.concatenate([a.next_u64(3), a.next_u64(5)])
    assert np.array_equal(first, Rng(9).next_u64(8))
    assert np.array_equal(Rng(9).random(10), Rng(9).random(10))


def test_derive_seed_distinct():
    seeds = {derive_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(7, 0) != derive_seed(8, 0)
    assert Rng(3).split(2).seed == derive_seed(3, 2)


def test_rng_distributions():
    r = Rng(1)
    u = r.random(100000)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.005
    d = Rng(2).digits(3, 30000)
    assert set(np.unique(d)) == {0, 1, 2}
    d4 = Rng(2).digits(4, 30000)
    assert np.array_equal(d4, (Rng(2).next_u64(30000) >> np.uint64(62)).astype(np.int64))
    b = Rng(3).bits(130)
    w = Rng(3).next_u64(3)
    assert b[:64].tolist() == [int(c) for c in format(int(w[0]), "064b")]
    c = Rng(4).choice([0.2, 0.8], 50000)
    assert abs(c.mean() - 0.8) < 0.01
    with pytest.raises(InvalidSpecError):
        Rng(0).digits(1, 3)
