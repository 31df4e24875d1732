import math

import numpy as np
import pytest

from contagion.ajd import AJDParams, expectation
from contagion.model import ContagionSpec, ObligorSet, RecoveryVector
from contagion.pricing import TrancheDeck, spreads
from contagion.simulator import (MCEstimate, chunk_rng, martingale_check, mc_expectation,
                                 mc_state_distribution, mc_tranche_spread, simulate_chain,
                                 simulate_defaults, simulate_factor, simulate_phi_integrals,
                                 simulate_y_path)

from conftest import BASE_AJD


def test_chunk_streams_are_reproducible_and_distinct():
    a = chunk_rng(5, 0).standard_normal(4)
    assert np.array_equal(a, chunk_rng(5, 0).standard_normal(4))
    assert not np.array_equal(a, chunk_rng(5, 1).standard_normal(4))
    assert not np.array_equal(a, chunk_rng(5, 0, stream=1).standard_normal(4))


def test_thread_count_does_not_change_draws():
    one = simulate_phi_integrals(BASE_AJD, [0.5, 1.0], 25_000, seed=3, dt=0.01, threads=1)
    two = simulate_phi_integrals(BASE_AJD, [0.5, 1.0], 25_000, seed=3, dt=0.01, threads=2)
    assert np.array_equal(one, two)


def test_factor_path_time_change():
    path = simulate_y_path(BASE_AJD, 2.0, 0.01, np.random.default_rng(1))
    assert path.grid[0] == 0.0 and path.grid[-1] == pytest.approx(2.0)
    assert np.all(np.diff(path.phi_integral) >= 0)
    for t in (0.3, 1.1, 1.9):
        assert path.time_of(path.integral_at(t)) == pytest.approx(t, abs=1e-9)
    assert path.time_of(path.phi_integral[-1] + 1.0) == math.inf


def test_factor_mean():
    p = BASE_AJD
    T = 2.0
    y, _ = simulate_factor(p, [T], 40_000, seed=11, dt=0.004)
    decay = math.exp(-p.kappa * T)
    exact = p.y0 * decay + (p.theta + p.l * p.mu / p.kappa) * (1 - decay)
    est = MCEstimate(float(y[:, 0].mean()), float(y[:, 0].std(ddof=1) / math.sqrt(y.shape[0])))
    assert est.within(exact)


def test_transform_against_monte_carlo():
    est = mc_expectation(BASE_AJD, 1.0, 1.0, 40_000, seed=2, dt=0.004)
    assert est.within(expectation(BASE_AJD, 1.0, 1.0))


def test_two_obligor_state_law():
    lam = 0.8
    spec = ContagionSpec.hcm(2, lam, 0.0, a0=2 * lam)
    z = 0.9
    law = mc_state_distribution(spec, [z], 50_000, seed=4)[z]
    e1, e2 = math.exp(-lam * z), math.exp(-2 * lam * z)
    exact = {0b00: e2, 0b01: e1 - e2, 0b10: e1 - e2, 0b11: 1 - 2 * e1 + e2}
    for bits, p in exact.items():
        mean, se = law.get(bits, (0.0, 0.0))
        assert abs(mean - p) <= 3 * se + 1e-12


def test_chain_draws_are_ordered():
    spec = ContagionSpec.hcm(8, 0.1, 0.05, a0=0.8)
    draws = simulate_chain(spec, 2000, seed=9)
    assert np.all(np.diff(draws.z, axis=1) >= 0)
    for row in draws.order[:50]:
        hit = [int(i) for i in row if i > 0]
        assert len(set(hit)) == len(hit)


def test_defaults_on_one_path():
    frozen = AJDParams(kappa=1.0, theta=1.0, sigma=0.0, l=0.0, mu=0.0, y0=1.0)
    path = simulate_y_path(frozen, 5.0, 0.01, np.random.default_rng(0))
    spec = ContagionSpec.hcm(10, 0.1, 0.0, a0=1.0)
    sc = simulate_defaults(spec, path, np.random.default_rng(1))
    assert list(sc.times) == sorted(sc.times)
    assert all(t <= 5.0 for t in sc.times)
    for k, F in enumerate(sc.sets):
        assert len(F) == k + 1 and sc.order[k] in F


def test_spread_against_closed_form():
    n = 10
    spec = ContagionSpec.hcm(n, 0.08, 0.1, a0=0.6)
    deck = TrancheDeck.regular((0.0, 0.1, 0.3, 1.0), (0.02, 0.0, 0.0), 3.0, 6, 0.04,
                               RecoveryVector.homogeneous(n, 0.4))
    closed = spreads(spec, deck, BASE_AJD)
    mc = mc_tranche_spread(spec, deck, BASE_AJD, 20_000, seed=5, dt=0.01)
    for est, want in zip(mc, closed):
        assert est.within(want, k=3.5)


def test_spread_needs_enough_paths():
    spec = ContagionSpec.hcm(4, 0.1, 0.1, a0=0.4)
    deck = TrancheDeck.regular((0.0, 1.0), (0.0,), 1.0, 4, 0.0, RecoveryVector.homogeneous(4, 0.4))
    with pytest.raises(ValueError):
        mc_tranche_spread(spec, deck, BASE_AJD, 500, seed=1)


def test_martingale():
    rng = np.random.default_rng(21)
    spec = ContagionSpec.general(rng.uniform(0.1, 0.4, 5), rng.uniform(0.05, 0.5, (5, 5)), 0.1)
    F = ObligorSet.of(5, [1, 3])
    worst, se, per_time = martingale_check(spec, BASE_AJD, F, [0.5, 1.0, 2.0], 20_000, seed=8, dt=0.01)
    assert len(per_time) == 3
    assert worst <= 3 * se + 1e-12
