import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitmatch.core import Metric, OrbitCloud, Rng
from orbitmatch.errors import DegenerateError, InvalidSpecError
from orbitmatch.mindist import mindist_naive, mindist_values
from orbitmatch.rotation import (
    ONE,
    check_convergent_bounds,
    cf_expand,
    cf_from_quotients,
    circle_norm128,
    convergent_probes,
    design_theta,
    eta_estimate,
    fixed128_to_float,
    golden_theta,
    rotation_mindist_exact,
    rotation_mindist_exact_fixed,
    rotation_mindist_series,
    rotation_scaling,
    sqrt2_theta,
    theta_from_fraction,
    theta_from_hex,
    theta_to_hex,
)


def fib(k):
    a, b = 1, 1
    out = []
    for _ in range(k):
        out.append(a)
        a, b = b, a + b
    return out


# -- continued fractions ------------------------------------------------------------


def test_golden_cf_is_fibonacci():
    cf = cf_expand(golden_theta())
    assert cf.partial_quotients[0] == 0
    assert all(a == 1 for a in cf.partial_quotients[1:])
    assert list(cf.q) == fib(cf.levels)
    assert cf.truncated and cf.levels > 80
    assert max(cf.q) ** 2 <= ONE


def test_sqrt2_cf():
    cf = cf_expand(sqrt2_theta())
    assert cf.partial_quotients[0] == 0
    assert all(a == 2 for a in cf.partial_quotients[1:])
    # Pell denominators: q_{k+1} = 2 q_k + q_{k-1}
    for k in range(2, cf.levels):
        assert cf.q[k] == 2 * cf.q[k - 1] + cf.q[k - 2]


def test_rational_third():
    cf = cf_expand(theta_from_fraction(1, 3))
    assert cf.partial_quotients == (0, 3)
    assert cf.truncated


def test_exact_rational_terminates():
    cf = cf_expand(theta_from_fraction(3, 8))
    assert cf.partial_quotients == (0, 2, 1, 2) and cf.terminated
    assert cf.value() == Fraction(3, 8)


def test_cf_errors():
    with pytest.raises(InvalidSpecError):
        cf_expand(0)
    with pytest.raises(InvalidSpecError):
        cf_expand(ONE)
    with pytest.raises(InvalidSpecError):
        cf_expand(golden_theta(), k_max=0)
    with pytest.raises(InvalidSpecError):
        cf_from_quotients([0, 1, 0, 2])


@given(st.integers(1, ONE - 1))
def test_cf_recurrence_and_alternation(theta):
    cf = cf_expand(theta)
    th = Fraction(theta, ONE)
    assert all(b > a for a, b in zip(cf.q[1:], cf.q[2:]))
    signs = [(Fraction(p, q) - th) for p, q in zip(cf.p, cf.q)]
    for k, s in enumerate(signs):
        if s != 0:
            assert (s < 0) == (k % 2 == 0)


@given(st.integers(1, ONE - 1))
def test_convergent_bounds_random(theta):
    cf = cf_expand(theta)
    assert check_convergent_bounds(theta, cf) == []


def test_convergent_bounds_named_angles():
    for theta in (golden_theta(), sqrt2_theta()):
        assert check_convergent_bounds(theta, cf_expand(theta)) == []
    for eta in (1.0, 1.5, 2.0, 3.0):
        theta, cf = design_theta(eta)
        assert cf.terminated
        assert check_convergent_bounds(theta, cf) == []
        assert check_convergent_bounds(theta, cf_expand(theta)) == []


def test_hex_round_trip():
    for theta in (golden_theta(), sqrt2_theta(), 1, ONE - 1):
        text = theta_to_hex(theta)
        assert len(text) == 34 and theta_from_hex(text) == theta
    with pytest.raises(InvalidSpecError):
        theta_from_hex("0x1" + "0" * 32)


# -- designed angles ------------------------------------------------------------------


def test_design_eta_one_is_golden_like():
    theta, cf = design_theta(1.0)
    assert all(a == 1 for a in cf.partial_quotients[1:])
    est = eta_estimate(cf)
    assert abs(est.per_k[-1] - 1) < 0.02


def test_design_eta_two():
    theta, cf = design_theta(2.0)
    assert cf.q[:6] == (1, 1, 2, 5, 27, 734)
    est = eta_estimate(cf)
    assert all(abs(r - 2) <= 0.15 * 2 for r in est.per_k[3:])
    assert abs(est.eta - 2) <= 0.15 * 2
    assert max(cf.q) <= 2**60
    # the expansion of the fixed-point angle reproduces the design
    back = cf_expand(theta)
    assert back.partial_quotients[:cf.levels] == cf.partial_quotients


def test_design_eta_three_deterministic():
    a = design_theta(3.0, k_max=200)
    b = design_theta(3.0, k_max=200)
    assert a == b
    assert a[1].levels - 1 >= 4
    assert max(a[1].q) <= 2**60


def test_design_too_large():
    with pytest.raises(DegenerateError):
        design_theta(8.0)
    with pytest.raises(InvalidSpecError):
        design_theta(0.5)


def test_eta_estimate_fibonacci():
    cf = cf_from_quotients([0] + [1] * 40)
    est = eta_estimate(cf)
    # log F_{k+1} / log F_k decreases to 1; within 5% once F_k exceeds about 2e4
    assert np.all(np.diff(est.per_k[3:]) < 0)
    assert abs(est.per_k[25] - 1) < 0.05
    assert abs(est.eta - 1) < 0.05


def test_eta_estimate_spike():
    quotients = [0, 1, 1, 1, 1, 1, 1, 10**6, 1, 1, 1, 1]
    est = eta_estimate(cf_from_quotients(quotients))
    spike = int(np.nanargmax(est.per_k))
    assert spike == 6
    others = np.delete(est.per_k, spike)
    assert np.nanmax(others) < 1.7 < est.per_k[spike]
    assert est.eta == est.per_k[spike]


def test_eta_estimate_needs_levels():
    with pytest.raises(DegenerateError):
        eta_estimate(cf_from_quotients([0, 1]))


# -- exact shortest distance -------------------------------------------------------------


def test_exact_examples():
    assert rotation_mindist_exact(golden_theta(), 0, 50) == 0.0
    assert rotation_mindist_exact(golden_theta(), ONE // 2, 1) == 0.5
    with pytest.raises(InvalidSpecError):
        rotation_mindist_exact(golden_theta(), 1, 0)
    assert circle_norm128(ONE - 5) == 5
    assert fixed128_to_float(ONE // 4) == 0.25


def test_exact_matches_rational_scan():
    rng = Rng(3)
    for _ in range(50):
        theta = int(rng.next_u64(1)[0]) << 64 | int(rng.next_u64(1)[0])
        delta = int(rng.next_u64(1)[0]) << 64 | int(rng.next_u64(1)[0])
        n = 1 + int(rng.digits(60, 1)[0])
        vals = [Fraction((delta + j * theta) % ONE, ONE) for j in range(-(n - 1), n)]
        expect = min(min(v, 1 - v) for v in vals)
        assert Fraction(rotation_mindist_exact_fixed(theta, delta, n), ONE) == expect


def test_series_matches_exact():
    rng = Rng(4)
    for theta in (golden_theta(), design_theta(2.0)[0]):
        delta = int(rng.next_u64(1)[0]) << 64 | int(rng.next_u64(1)[0])
        series = rotation_mindist_series(theta, delta, 3000)
        for n in (1, 2, 3, 10, 99, 1000, 3000):
            assert series[n - 1] == rotation_mindist_exact(theta, delta, n)
        assert np.all(np.diff(series) <= 0)


def test_exact_agrees_with_mindist_pipeline():
    """Angles and offsets on the 64-bit grid make the 128-bit formula and the
    64-bit orbit clouds describe the same orbits exactly."""
    rng = Rng(5)
    for _ in range(100):
        step = int(rng.next_u64(1)[0]) | 1
        x0, y0 = (int(v) for v in rng.next_u64(2))
        n = 1 + int(rng.digits(1000, 1)[0])
        idx = np.arange(n, dtype=np.uint64)
        X = OrbitCloud((np.uint64(x0) + idx * np.uint64(step))[:, None], Metric.TORUS_MAX)
        Y = OrbitCloud((np.uint64(y0) + idx * np.uint64(step))[:, None], Metric.TORUS_MAX)
        exact = rotation_mindist_exact(step << 64, ((x0 - y0) % 2**64) << 64, n)
        assert exact == mindist_values(X, Y, [n])[0]
        if n <= 200:
            assert exact == mindist_naive(X, Y, n)


# -- scaling report --------------------------------------------------------------------


def test_convergent_probes_range():
    cf = cf_expand(golden_theta())
    probes = convergent_probes(cf, 100, 10**4)
    assert probes.min() >= 100 and probes.max() <= 10**4
    assert np.all(np.diff(probes) > 0)
    assert set(probes) >= {q for q in cf.q if 100 <= q <= 10**4}


def test_rotation_scaling_excludes_zero_delta():
    theta = golden_theta()
    rep = rotation_scaling(theta, 10**4, 3, Rng(1), deltas=[0, ONE // 3, 12345 << 90])
    assert rep.trials[0].excluded and math.isnan(rep.trials[0].max_exponent)
    assert not rep.trials[1].excluded
    assert rep.targets == (1.0 / rep.eta.eta, 1.0)
    assert math.isfinite(rep.median_max_exponent) and math.isfinite(rep.median_min_exponent)
    with pytest.raises(DegenerateError):
        rotation_scaling(theta, 10**4, 1, Rng(1), deltas=[0])
    with pytest.raises(InvalidSpecError):
        rotation_scaling(theta, 100, 1, Rng(1))


def test_rotation_trial_consistent_with_series():
    theta = golden_theta()
    rep = rotation_scaling(theta, 20000, 2, Rng(7))
    for t in rep.trials:
        series = rotation_mindist_series(theta, t.delta, 20000)
        assert np.array_equal(t.schedule_m, series[rep.schedule.values - 1])
        assert np.array_equal(t.probe_m, series[t.probe_n - 1])
        assert t.min_exponent == pytest.approx(np.min(np.log(t.probe_m) / -np.log(t.probe_n)))


def test_rotation_scaling_deterministic():
    a = rotation_scaling(golden_theta(), 5000, 3, Rng(9))
    b = rotation_scaling(golden_theta(), 5000, 3, Rng(9))
    assert [t.delta for t in a.trials] == [t.delta for t in b.trials]
    assert a.median_max_exponent == b.median_max_exponent
