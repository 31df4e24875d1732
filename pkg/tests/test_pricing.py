import math
import time

import numpy as np
import pytest

from contagion.ajd import AJDParams
from contagion.hypoexp import RateCollision
from contagion.kernel import kernel_row
from contagion.model import ContagionSpec, ObligorSet, RecoveryVector
from contagion.precision import PrecisionLoss, PrecisionPolicy
from contagion.pricing import (TrancheDeck, attach_detach_times, detach_counts, expected_default_count,
                               expected_tranche_loss_general, expected_tranche_loss_hcm,
                               expected_tranche_loss_ncm, index_spread, loss_count_distribution,
                               loss_curve, precision_self_check, spreads, suggest_precision,
                               tranche_loss, tranche_loss_count, tranche_spread, upfront_rate)

from conftest import BASE_AJD, BASE_ATTACH, base_deck

BASE_HCM_SPREADS = (1002.33, 840.24, 795.70, 776.82, 739.12, 619.46)
SMALL = PrecisionPolicy(256)


def base_hcm(n=125):
    return ContagionSpec.hcm(n, 0.05, -0.008, a0=0.35)


def small_deck(n, attach=(0.0, 0.1, 0.3, 0.6, 1.0), upfront=(0.02, 0.0, 0.0, 0.0), recovery=0.4):
    return TrancheDeck.regular(attach, upfront, 3.0, 6, 0.04, RecoveryVector.homogeneous(n, recovery))


class TestDeck:
    def test_validation(self):
        rec = RecoveryVector.homogeneous(5, 0.4)
        with pytest.raises(ValueError):
            TrancheDeck.regular((0.1, 0.5), (0.0,), 1.0, 4, 0.0, rec)
        with pytest.raises(ValueError):
            TrancheDeck.regular((0.0, 0.5, 0.4), (0.0, 0.0), 1.0, 4, 0.0, rec)
        with pytest.raises(ValueError):
            TrancheDeck.regular((0.0, 0.5), (0.0, 0.0), 1.0, 4, 0.0, rec)
        with pytest.raises(ValueError):
            TrancheDeck.regular((0.0, 0.5), (0.0,), 1.0, 4, 0.0, rec, premium_timing="late")

    def test_pay_grid(self):
        deck = base_deck()
        assert len(deck.pay_times) == 21 and deck.maturity == 5.0
        assert deck.width(1) == pytest.approx(0.03)


class TestTrancheLoss:
    def test_piecewise_linear_in_count(self):
        deck = small_deck(10)
        # each default costs 6% of the pool
        assert tranche_loss_count(deck, 1, 0) == 0.0
        assert tranche_loss_count(deck, 1, 1) == pytest.approx(0.06)
        assert tranche_loss_count(deck, 1, 2) == pytest.approx(0.1)
        assert tranche_loss_count(deck, 2, 2) == pytest.approx(0.02)
        assert tranche_loss_count(deck, 4, 10) == pytest.approx(0.0)

    def test_set_and_count_agree(self):
        deck = small_deck(10)
        F = ObligorSet.of(10, [2, 5, 9])
        for i in range(1, 5):
            assert tranche_loss(deck, i, F) == tranche_loss_count(deck, i, 3)

    def test_heterogeneous_recovery(self):
        rec = RecoveryVector((0.0, 0.5, 0.9, 0.4))
        deck = TrancheDeck.regular((0.0, 0.2, 1.0), (0.0, 0.0), 1.0, 2, 0.0, rec)
        F = ObligorSet.of(4, [1, 2])
        # pool loss = (1 + 0.5) / 4 = 0.375
        assert tranche_loss(deck, 1, F) == pytest.approx(0.2)
        assert tranche_loss(deck, 2, F) == pytest.approx(0.175)

    def test_tranches_add_up_to_pool_loss(self):
        deck = small_deck(10)
        for k in range(11):
            assert sum(tranche_loss_count(deck, i, k) for i in range(1, 5)) == pytest.approx(0.06 * k)


class TestClosedFormAgainstEnumeration:
    @pytest.mark.parametrize("seed", range(3))
    def test_hcm(self, seed):
        rng = np.random.default_rng(seed)
        spec = ContagionSpec.hcm(6, rng.uniform(0.01, 0.3), rng.uniform(-0.5, 0.5), a0=rng.uniform(0.1, 1.0))
        deck = small_deck(6)
        for i in range(1, 5):
            for t in deck.pay_times[1:]:
                a = expected_tranche_loss_hcm(spec, deck, i, t, BASE_AJD, SMALL)
                b = expected_tranche_loss_general(spec, deck, i, t, BASE_AJD, SMALL)
                assert a == pytest.approx(b, rel=1e-9, abs=1e-300)

    @pytest.mark.parametrize("seed", range(3))
    def test_ncm(self, seed):
        rng = np.random.default_rng(100 + seed)
        spec = ContagionSpec.ncm(6, rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(-0.5, 0.5),
                                 a0=rng.uniform(0.1, 1.0))
        deck = small_deck(6)
        for i in range(1, 5):
            for t in deck.pay_times[1:]:
                a = expected_tranche_loss_ncm(spec, deck, i, t, BASE_AJD, SMALL)
                b = expected_tranche_loss_general(spec, deck, i, t, BASE_AJD, SMALL)
                assert a == pytest.approx(b, rel=1e-9, abs=1e-300)

    def test_kind_mismatch(self):
        spec = base_hcm(6)
        with pytest.raises(ValueError):
            expected_tranche_loss_ncm(spec, small_deck(6), 1, 1.0, BASE_AJD, SMALL)

    def test_zero_time(self):
        spec = base_hcm(6)
        assert expected_tranche_loss_hcm(spec, small_deck(6), 1, 0.0, BASE_AJD, SMALL) == 0.0


class TestCountDistribution:
    # a factor frozen at its starting level turns the integrated scaling into y0 * t
    frozen = AJDParams(kappa=1.0, theta=0.8, sigma=0.0, l=0.0, mu=0.0, y0=0.8)

    def test_matches_kernel_row(self):
        spec = ContagionSpec.hcm(7, 0.11, 0.2, a0=0.6)
        t = 2.5
        dist = loss_count_distribution(spec, t, self.frozen, SMALL)
        row = kernel_row(spec, ObligorSet.empty(7), self.frozen.y0 * t, SMALL)
        by_count = np.zeros(8)
        for F, p in row.items():
            by_count[len(F)] += p
        assert dist == pytest.approx(by_count, abs=1e-12)

    def test_normalized_and_mean(self):
        spec = base_hcm()
        dist = loss_count_distribution(spec, 5.0, BASE_AJD)
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)
        assert (dist >= -1e-15).all()
        mean = float(np.arange(126) @ dist)
        assert expected_default_count(spec, 5.0, BASE_AJD) == pytest.approx(mean, rel=1e-10)

    def test_general_matches_closed(self):
        spec = ContagionSpec.hcm(5, 0.2, 0.3, a0=0.5)
        gen = ContagionSpec.general(spec.beta, spec.rho, spec.delta)
        a = loss_count_distribution(spec, 1.5, BASE_AJD, SMALL)
        b = loss_count_distribution(gen, 1.5, BASE_AJD, SMALL)
        assert a == pytest.approx(b, abs=1e-12)
        assert expected_default_count(gen, 1.5, BASE_AJD, SMALL) == pytest.approx(
            expected_default_count(spec, 1.5, BASE_AJD, SMALL), rel=1e-10)


class TestBaseDeck:
    def test_hcm_spreads(self):
        start = time.perf_counter()
        got = spreads(base_hcm(), base_deck(), BASE_AJD)
        assert time.perf_counter() - start < 60
        for g, want in zip(got, BASE_HCM_SPREADS):
            assert g == pytest.approx(want, rel=1e-4)

    def test_ncm_spreads(self):
        spec = ContagionSpec.ncm(125, 0.3, 0.3, -0.7, a0=0.35)
        want = (418, 190, 211, 235, 259, 283)
        for g, w in zip(spreads(spec, base_deck(), BASE_AJD), want):
            assert g == pytest.approx(w, rel=0.015)

    def test_precision_doubling(self):
        assert precision_self_check(base_hcm(), base_deck(), BASE_AJD) <= 1e-9

    def test_too_few_bits_is_reported(self):
        with pytest.raises(PrecisionLoss):
            spreads(base_hcm(), base_deck(), BASE_AJD, PrecisionPolicy(128))


class TestSpreads:
    def test_upfront_round_trip(self):
        spec = ContagionSpec.hcm(20, 0.08, 0.05, a0=0.5)
        deck = small_deck(20)
        curve = loss_curve(spec, deck, BASE_AJD)
        s = tranche_spread(deck, 1, curve)
        assert upfront_rate(deck, 1, curve, s) == pytest.approx(deck.upfront[0], abs=1e-12)

    def test_premium_timing_order(self):
        spec = ContagionSpec.hcm(20, 0.08, 0.05, a0=0.5)
        vals = []
        for timing in ("start", "mid", "end"):
            deck = TrancheDeck.regular((0.0, 0.1, 1.0), (0.0, 0.0), 3.0, 6, 0.04,
                                       RecoveryVector.homogeneous(20, 0.4), timing)
            vals.append(spreads(spec, deck, BASE_AJD)[0])
        assert vals[0] < vals[1] < vals[2]

    def test_equity_spread_rises_with_base_rate(self):
        deck = small_deck(20)
        lo = spreads(ContagionSpec.hcm(20, 0.05, 0.05, a0=0.3), deck, BASE_AJD)[0]
        hi = spreads(ContagionSpec.hcm(20, 0.05, 0.05, a0=0.6), deck, BASE_AJD)[0]
        assert hi > lo

    def test_index_from_full_deck_matches_default_fraction(self):
        spec = ContagionSpec.hcm(20, 0.08, 0.05, a0=0.5)
        deck = small_deck(20)
        curve = loss_curve(spec, deck, BASE_AJD)
        pool = 0.6 * np.asarray(curve.default_fraction)
        assert index_spread(deck, curve) == pytest.approx(index_spread(deck, pool), rel=1e-10)
        assert index_spread(deck, curve, "market") > 0

    def test_index_needs_a_pool_loss(self):
        rec = RecoveryVector((0.4,) * 19 + (0.5,))
        deck = TrancheDeck.regular((0.0, 0.1, 0.5), (0.0, 0.0), 1.0, 4, 0.04, rec)
        curve = loss_curve(ContagionSpec.hcm(20, 0.08, 0.05, a0=0.5),
                           TrancheDeck.regular((0.0, 0.1, 0.5), (0.0, 0.0), 1.0, 4, 0.04,
                                               RecoveryVector.homogeneous(20, 0.4)), BASE_AJD)
        with pytest.raises(ValueError):
            index_spread(deck, curve)
        with pytest.raises(ValueError):
            index_spread(deck, curve, "nonsense")

    def test_rate_collision_surfaces(self):
        # delta = 0 and N = 5 give a_2 = a_3
        spec = ContagionSpec.hcm(5, 0.3, 0.0, a0=0.5)
        with pytest.raises(RateCollision):
            loss_curve(spec, small_deck(5), BASE_AJD)

    def test_deck_size_must_match(self):
        with pytest.raises(ValueError):
            loss_curve(base_hcm(), small_deck(20), BASE_AJD)


class TestPrecisionSuggestion:
    def test_floor_and_growth(self):
        small = suggest_precision(ContagionSpec.hcm(6, 0.1, 0.1, a0=0.5))
        large = suggest_precision(base_hcm())
        assert small.mantissa_bits >= 128
        assert large.mantissa_bits > small.mantissa_bits

    def test_suggested_precision_prices_base_deck(self):
        pol = suggest_precision(base_hcm())
        got = spreads(base_hcm(), base_deck(), BASE_AJD, pol)
        assert got[0] == pytest.approx(BASE_HCM_SPREADS[0], rel=1e-4)


class TestAttachDetach:
    def test_half_up_counts(self):
        assert detach_counts(base_deck()) == [6, 13, 19, 25, 46, 125]
        assert detach_counts(base_deck(), "floor")[:2] == [6, 12]
        assert detach_counts(base_deck(), "ceil")[:2] == [7, 13]

    def test_heterogeneous_recovery_rejected(self):
        rec = RecoveryVector((0.4, 0.5))
        deck = TrancheDeck.regular((0.0, 0.5), (0.0,), 1.0, 4, 0.0, rec)
        with pytest.raises(ValueError):
            detach_counts(deck)

    def test_equity_times(self):
        times = attach_detach_times(base_hcm(), base_deck(), BASE_AJD)
        t_att, t_det = times[0]
        assert 0.25 <= t_att <= 0.75
        assert 1.0 <= t_det <= 1.5
        # each tranche attaches when the one below detaches
        for (_, d), (a, _) in zip(times, times[1:]):
            assert a == d
        finite = [d for _, d in times if math.isfinite(d)]
        assert finite == sorted(finite)

    def test_zero_attach_option(self):
        times = attach_detach_times(base_hcm(), base_deck(), BASE_AJD, zero_attach="zero")
        assert times[0][0] == 0.0
