import math

import gmpy2
import pytest
from hypothesis import given, settings, strategies as st

from contagion.hypoexp import (RateCollision, alpha_coeffs, alpha_product_form, hypoexp_mix,
                               hypoexp_mix_integral)
from contagion.precision import PrecisionPolicy


def test_two_rates_with_zero():
    b1 = 0.37
    c = alpha_coeffs([b1, 0.0]).as_float()
    assert c == pytest.approx([-1 / b1, 1 / b1], rel=1e-15)


def test_single_rate():
    assert alpha_coeffs([2.5]).as_float().tolist() == [1.0]


def test_one_two_three():
    assert alpha_coeffs([1, 2, 3]).as_float() == pytest.approx([0.5, -1.0, 0.5], rel=1e-15)


def test_collision_names_pair():
    with pytest.raises(RateCollision) as err:
        alpha_coeffs([0.3, 1.0, 2.0, 1.0 + 1e-14])
    assert err.value.pair == (1, 3)


def test_collision_tolerance_is_configurable():
    loose = PrecisionPolicy(256, collision_rel_tol=1e-3)
    with pytest.raises(RateCollision):
        alpha_coeffs([1.0, 1.0005], loose)
    alpha_coeffs([1.0, 1.0005], PrecisionPolicy(256, 1e-12))


def test_mix_base_case():
    assert hypoexp_mix(alpha_coeffs([0.7]), 2.0) == pytest.approx(math.exp(-1.4), rel=1e-15)


def test_mix_vanishes_at_zero():
    assert hypoexp_mix(alpha_coeffs([0.2, 1.1, 3.0, 0.05]), 0.0) == pytest.approx(0.0, abs=1e-15)


def test_mix_two_rates():
    val = hypoexp_mix(alpha_coeffs([1, 2]), 1.0)
    assert val == pytest.approx(math.exp(-1) - math.exp(-2), rel=1e-14)
    assert val == pytest.approx(0.23254, abs=1e-5)


def test_mix_rejects_negative_time():
    with pytest.raises(ValueError):
        hypoexp_mix(alpha_coeffs([1, 2]), -1.0)


class TestQuadratureOracle:
    def test_order_zero_matches(self):
        assert hypoexp_mix_integral([0.7], 2.0) == hypoexp_mix(alpha_coeffs([0.7]), 2.0)

    def test_two_rates(self):
        assert hypoexp_mix_integral([1, 2], 1.0) == pytest.approx(math.exp(-1) - math.exp(-2), abs=1e-10)

    def test_three_rates(self):
        closed = hypoexp_mix(alpha_coeffs([1, 2, 3]), 0.7)
        assert hypoexp_mix_integral([1, 2, 3], 0.7) == pytest.approx(closed, abs=1e-10)

    def test_refuses_long_chains(self):
        with pytest.raises(ValueError):
            hypoexp_mix_integral([1, 2, 3, 4, 5, 6, 7, 8], 1.0)


rates_strategy = st.lists(st.floats(1e-3, 10.0), min_size=2, max_size=5, unique=True).filter(
    lambda r: max(r) / min(r) <= 1e4
    and min(abs(a - b) for i, a in enumerate(r) for b in r[i + 1:]) > 1e-3 * max(r))


@settings(max_examples=25, deadline=None)
@given(rates_strategy, st.floats(0.05, 5.0))
def test_closed_form_matches_quadrature(rates, z):
    closed = hypoexp_mix(alpha_coeffs(rates), z)
    oracle = hypoexp_mix_integral(rates, z)
    assert closed == pytest.approx(oracle, rel=1e-9, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(rates_strategy, st.floats(1e-3, 20.0), st.randoms(use_true_random=False))
def test_positive_and_permutation_invariant(rates, z, rnd):
    shuffled = list(rates)
    rnd.shuffle(shuffled)
    a = hypoexp_mix(alpha_coeffs(rates), z)
    b = hypoexp_mix(alpha_coeffs(shuffled), z)
    assert a > 0
    assert a == pytest.approx(b, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-3, 50.0), min_size=2, max_size=21, unique=True))
def test_recursion_matches_product_form(rates):
    pol = PrecisionPolicy()
    try:
        table = alpha_coeffs(rates, pol)
    except RateCollision:
        return
    prod = alpha_product_form(rates, pol)
    with pol.context():
        for c, p in zip(table.coeffs, prod):
            assert abs(c - p) <= gmpy2.mpfr("1e-20") * abs(p)


def test_cancellation_sentinel():
    pol = PrecisionPolicy()
    rates = [0.35] + [0.05 * k * (125 - k) * math.exp(0.008 * k) for k in range(1, 40)]
    table = alpha_coeffs(rates, pol)
    with pol.context():
        top = max(abs(c) for c in table.coeffs)
        assert abs(table.residual) <= gmpy2.mpfr(2) ** (-(pol.mantissa_bits // 2)) * top
