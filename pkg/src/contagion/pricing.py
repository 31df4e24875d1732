"""Tranche losses, expected tranche losses and CDO spreads.

Under homogeneous and near-neighbour contagion the aggregate load of a
reachable default set depends only on its size, so the law of the number of
defaults is a hypoexponential mixture over a *rate ladder*
``a_0, ..., a_N`` with combinatorial weights ``w_n``::

    P(|X_t| = n | z) = w_n * sum_{i<=n} alpha^(n)_i exp(-a_i z),   w_0 = 1.

Any functional ``sum_n g(n) P(|X_t| = n)`` then collapses to
``sum_i Gamma_i E[exp(-a_i int_0^t Y)]`` with ``Gamma_i = sum_{n>=i} g(n)
w_n alpha^(n)_i``.  The last rate is zero (all names defaulted), so its term
is a constant.  That constant is computed explicitly from the coefficient
table and equals ``g(N)``, i.e. the fully-defaulted tranche loss.

All coefficient work runs in MPFR because ``Gamma_i`` and ``w_n alpha`` reach
enormous magnitudes with alternating signs for ``N = 125``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr
from scipy.optimize import brentq

from .ajd import AJDParams, TransformLadder
from .hypoexp import alpha_triangle
from .kernel import GENERAL_MAX_N, path_mixture_coefficients
from .model import ContagionSpec, ObligorSet, RecoveryVector, aggregate_load
from .precision import DEFAULT_PRECISION, PrecisionLoss, PrecisionPolicy

__all__ = [
    "TrancheDeck",
    "LossCurve",
    "DegenerateTranche",
    "tranche_loss",
    "tranche_loss_count",
    "expected_tranche_loss_general",
    "expected_tranche_loss_hcm",
    "expected_tranche_loss_ncm",
    "loss_curve",
    "tranche_spread",
    "index_spread",
    "upfront_rate",
    "spreads",
    "loss_count_distribution",
    "expected_default_count",
    "detach_counts",
    "attach_detach_times",
    "precision_self_check",
    "suggest_precision",
]


class DegenerateTranche(ArithmeticError):
    """The premium leg of a tranche is zero, so no spread exists."""


@dataclass(frozen=True)
class TrancheDeck:
    """Contract terms shared by all tranches of one CDO.

    ``attach`` holds ``0 = p_0 < ... < p_K <= 1``; tranche ``i`` (1-based)
    covers ``[p_{i-1}, p_i]``.  ``upfront`` holds one rate per tranche as a
    fraction of tranche notional.  ``pay_times`` starts at 0 and ends at the
    maturity.  ``premium_timing`` selects which expected loss the premium
    accrues on over each period: ``start`` (default), ``mid`` or ``end``.
    """

    attach: tuple
    upfront: tuple
    pay_times: tuple
    r: float
    recovery: RecoveryVector
    premium_timing: str = "start"

    def __post_init__(self):
        attach = tuple(float(x) for x in self.attach)
        upfront = tuple(float(x) for x in self.upfront)
        times = tuple(float(x) for x in self.pay_times)
        if len(attach) < 2 or attach[0] != 0.0:
            raise ValueError("attach must start at 0 and hold at least one tranche")
        if any(b <= a for a, b in zip(attach, attach[1:])) or attach[-1] > 1.0:
            raise ValueError("attach points must be strictly increasing within [0, 1]")
        if len(upfront) != len(attach) - 1:
            raise ValueError("need one upfront rate per tranche")
        if len(times) < 2 or times[0] != 0.0:
            raise ValueError("pay_times must start at 0 and contain the maturity")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("pay_times must be strictly increasing")
        if self.premium_timing not in ("start", "mid", "end"):
            raise ValueError("premium_timing must be start, mid or end")
        object.__setattr__(self, "attach", attach)
        object.__setattr__(self, "upfront", upfront)
        object.__setattr__(self, "pay_times", times)
        object.__setattr__(self, "r", float(self.r))

    @classmethod
    def regular(cls, attach: Sequence[float], upfront: Sequence[float], maturity: float,
                n_payments: int, r: float, recovery: RecoveryVector,
                premium_timing: str = "start") -> "TrancheDeck":
        times = tuple(maturity * k / n_payments for k in range(n_payments + 1))
        return cls(tuple(attach), tuple(upfront), times, r, recovery, premium_timing)

    @property
    def n_tranches(self) -> int:
        return len(self.attach) - 1

    @property
    def n_obligors(self) -> int:
        return self.recovery.n

    @property
    def maturity(self) -> float:
        return self.pay_times[-1]

    def bounds(self, i: int) -> tuple:
        if not 1 <= i <= self.n_tranches:
            raise IndexError(f"tranche {i} outside 1..{self.n_tranches}")
        return self.attach[i - 1], self.attach[i]

    def width(self, i: int) -> float:
        lo, hi = self.bounds(i)
        return hi - lo

    def with_tranches(self, attach, upfront) -> "TrancheDeck":
        return TrancheDeck(tuple(attach), tuple(upfront), self.pay_times, self.r,
                           self.recovery, self.premium_timing)


@dataclass(frozen=True)
class LossCurve:
    """Expected tranche losses on the payment grid.

    ``values[i-1, k]`` is ``E[L^(i)(X_{t_k})]``.  ``default_fraction[k]`` is
    the expected fraction of defaulted names, used by the market index
    convention.
    """

    times: np.ndarray
    values: np.ndarray
    default_fraction: Optional[np.ndarray] = None


def _tranche_piece(loss: float, lo: float, hi: float) -> float:
    return max(loss - lo, 0.0) - max(loss - hi, 0.0)


def tranche_loss(deck: TrancheDeck, i: int, F: ObligorSet) -> float:
    """Loss absorbed by tranche ``i`` when the names in ``F`` have defaulted."""
    lo, hi = deck.bounds(i)
    n = deck.n_obligors
    if F.n_total != n:
        raise ValueError("default set and deck disagree on the portfolio size")
    rate = deck.recovery.homogeneous_rate
    if rate is not None:
        return tranche_loss_count(deck, i, len(F))
    loss = math.fsum(1.0 - deck.recovery.r[j - 1] for j in F) / n
    return _tranche_piece(loss, lo, hi)


def tranche_loss_count(deck: TrancheDeck, i: int, count: int) -> float:
    """Homogeneous-recovery tranche loss after ``count`` defaults."""
    rate = deck.recovery.homogeneous_rate
    if rate is None:
        raise ValueError("count-based tranche loss needs a homogeneous recovery")
    lo, hi = deck.bounds(i)
    return _tranche_piece(count * (1.0 - rate) / deck.n_obligors, lo, hi)


# ---------------------------------------------------------------------------
# rate ladders for the structured models
# ---------------------------------------------------------------------------

@dataclass
class _Ladder:
    """Rates ``a_0..a_M``, weights ``w_0..w_M`` and the alpha triangle.

    ``M < N`` when a zero rate cuts the chain short (e.g. no contagion).
    Everything is MPFR at the creating precision.
    """

    rates: list
    weights: list
    alphas: list
    precision: PrecisionPolicy
    gamma_cache: dict = field(default_factory=dict)
    transforms: dict = field(default_factory=dict)

    @property
    def top(self) -> int:
        return len(self.rates) - 1

    def gamma(self, key, g: Sequence[float]) -> list:
        """``Gamma_i = sum_{n>=i} g(n) w_n alpha^(n)_i`` for ``i = 0..M``."""
        got = self.gamma_cache.get(key)
        if got is not None:
            return got
        top = self.top
        out = []
        for i in range(top + 1):
            terms = [mpfr(g[n]) * self.weights[n] * self.alphas[n][i]
                     for n in range(i, top + 1) if g[n] != 0.0]
            out.append(gmpy2.fsum(terms) if terms else mpfr(0))
        self.gamma_cache[key] = out
        return out

    def column_scale(self) -> list:
        """``max_n |w_n alpha^(n)_i|`` per column ``i``: the size of the
        terms whose alternating sum forms ``Gamma_i``."""
        got = self.gamma_cache.get("_scale")
        if got is None:
            top = self.top
            got = [max(abs(self.weights[n] * self.alphas[n][i]) for n in range(i, top + 1))
                   for i in range(top + 1)]
            self.gamma_cache["_scale"] = got
        return got

    def _suffix_sums(self):
        """Per column ``i``: tails ``sum_{n>=k} w_n alpha^(n)_i`` and
        ``sum_{n>=k} n w_n alpha^(n)_i`` for ``k = i..M`` (built once)."""
        got = self.gamma_cache.get("_suffix")
        if got is not None:
            return got
        top = self.top
        s0, s1 = [], []
        for i in range(top + 1):
            a0, a1 = [None] * (top + 2 - i), [None] * (top + 2 - i)
            acc0 = acc1 = mpfr(0)
            a0[-1] = a1[-1] = acc0
            for n in range(top, i - 1, -1):
                term = self.weights[n] * self.alphas[n][i]
                acc0 = acc0 + term
                acc1 = acc1 + n * term
                a0[n - i], a1[n - i] = acc0, acc1
            s0.append(a0)
            s1.append(a1)
        self.gamma_cache["_suffix"] = (s0, s1)
        return s0, s1

    def ramp_gamma(self, level) -> list:
        """``Gamma_i`` for ``g(n) = (n - level)^+`` via the tail sums."""
        key = ("ramp", level)
        got = self.gamma_cache.get(key)
        if got is not None:
            return got
        s0, s1 = self._suffix_sums()
        lv = mpfr(level)
        first = max(0, math.floor(level) + 1)
        out = []
        for i in range(self.top + 1):
            k = max(i, first)
            if k > self.top:
                out.append(mpfr(0))
            else:
                out.append(s1[i][k - i] - lv * s0[i][k - i])
        self.gamma_cache[key] = out
        return out

    def tranche_gamma(self, lo: float, hi: float, recovery: float, n: int) -> list:
        """``Gamma_i`` for the tranche loss ``c ((k - A)^+ - (k - B)^+)`` with
        ``c = (1 - R) / N`` and ``A, B`` the attachment points in names."""
        key = ("tranche", lo, hi, recovery, n)
        got = self.gamma_cache.get(key)
        if got is not None:
            return got
        c = (1 - mpfr(recovery)) / n
        # levels in units of names; exact rationals keep ties such as 6.25 exact
        lo_lv = mpfr(lo) / c
        hi_lv = mpfr(hi) / c
        ga = self.ramp_gamma(lo_lv)
        gb = self.ramp_gamma(hi_lv)
        out = [c * (a - b) for a, b in zip(ga, gb)]
        self.gamma_cache[key] = out
        return out


def _truncate(rates):
    for k, a in enumerate(rates):
        if a == 0:
            return k + 1
    return len(rates)


def _build_ladder(rates, step_loads, precision) -> _Ladder:
    """``step_loads[k]`` is the summed path load of the step from size ``k``."""
    m = _truncate(rates)
    rates = rates[:m]
    weights = [mpfr(1)]
    for k in range(m - 1):
        weights.append(weights[-1] * step_loads[k])
    alphas = alpha_triangle(rates, precision, check=True)
    return _Ladder(rates, weights, alphas, precision)


@lru_cache(maxsize=64)
def _hcm_ladder(n: int, a0: float, rho: float, delta: float, precision: PrecisionPolicy) -> _Ladder:
    with precision.context():
        md = mpfr(delta)
        rates = [mpfr(a0)]
        for k in range(1, n):
            rates.append(mpfr(rho) * (k * (n - k)) * gmpy2.exp(-md * k))
        rates.append(mpfr(0))
        # path weight from size k to k+1, summed over the survivors chosen:
        # a_0 (pick any first name), then k rho h(k) per each of N-k survivors
        loads = [mpfr(a0)] + [mpfr(rho) * k * (n - k) * gmpy2.exp(-md * k) for k in range(1, n)]
        return _build_ladder(rates, loads, precision)


@lru_cache(maxsize=64)
def _ncm_ladder(n: int, a0: float, pq: float, delta: float, precision: PrecisionPolicy) -> _Ladder:
    with precision.context():
        md = mpfr(delta)
        rates = [mpfr(a0)] + [gmpy2.exp(-md * k) * mpfr(pq) for k in range(1, n)] + [mpfr(0)]
        loads = list(rates[:-1])
        return _build_ladder(rates, loads, precision)


def _float_ladder(spec: ContagionSpec):
    n, d = spec.n, spec.delta
    k = np.arange(1, n)
    if spec.kind == "hcm":
        inner = spec.params["rho"] * k * (n - k) * np.exp(-d * k)
    elif spec.kind == "ncm":
        inner = (spec.params["p"] + spec.params["q"]) * np.exp(-d * k)
    else:
        raise ValueError("closed-form ladder needs an hcm or ncm spec")
    rates = np.concatenate([[spec.a0], inner, [0.0]])
    return rates[:_truncate(list(rates))]


def suggest_precision(spec: ContagionSpec, guard_bits: int = 128, floor_bits: int = 128,
                      base: PrecisionPolicy = DEFAULT_PRECISION) -> PrecisionPolicy:
    """Smallest precision that carries the ladder's largest coefficient
    ``w_n alpha^(n)_i`` plus ``guard_bits`` of headroom.

    The estimate works on logarithms in double precision, so it costs
    ``O(N^2)`` float operations.  Pricing still checks the realized
    cancellation and raises :class:`PrecisionLoss` if the guess was short.
    """
    rates = _float_ladder(spec)
    m = rates.size
    if m <= 1:
        return PrecisionPolicy(max(53, floor_bits), base.collision_rel_tol)
    diff = np.abs(rates[:, None] - rates[None, :])
    np.fill_diagonal(diff, 1.0)
    with np.errstate(divide="ignore"):
        logd = np.log2(diff)
        logw = np.concatenate([[0.0], np.cumsum(np.log2(rates[:-1]))])
    if not np.all(np.isfinite(logd)):
        return base
    # log2 |alpha^(n)_i| = -sum_{j<=n, j!=i} log2 |a_j - a_i|
    tail = np.cumsum(logd, axis=0)
    mags = logw[:, None] - tail
    mags[np.tril_indices(m, -1)[::-1]] = -np.inf  # keep i <= n
    top = float(np.max(mags))
    bits = int(math.ceil(max(top, 0.0) + guard_bits + 2 * math.log2(m)))
    return PrecisionPolicy(max(floor_bits, bits), base.collision_rel_tol)


def _ladder_for(spec: ContagionSpec, precision: PrecisionPolicy) -> _Ladder:
    if spec.kind == "hcm":
        return _hcm_ladder(spec.n, spec.a0, spec.params["rho"], spec.delta, precision)
    if spec.kind == "ncm":
        return _ncm_ladder(spec.n, spec.a0, spec.params["p"] + spec.params["q"], spec.delta, precision)
    raise ValueError("closed-form ladder needs an hcm or ncm spec")


def _transform_ladder(p: AJDParams, ladder: _Ladder) -> TransformLadder:
    got = ladder.transforms.get(p)
    if got is None:
        with ladder.precision.context():
            got = TransformLadder(p, ladder.rates)
        ladder.transforms[p] = got
    return got


def _ladder_expectation(ladder: _Ladder, tl: TransformLadder, gamma, t: float,
                        g_bound: float) -> float:
    """``sum_i Gamma_i E[e^{-a_i Z_t}]`` with a cancellation check.

    ``g_bound`` bounds the functional behind ``gamma`` (and its partial
    ramps).  The rounding error of each ``Gamma_i`` scales with
    ``g_bound * column_scale[i]``, so that magnitude enters the check even
    when the final sum itself shows no cancellation.
    """
    pol = ladder.precision
    with pol.context():
        vals = tl.values(t)
        terms = [g * v for g, v in zip(gamma, vals)]
        total = gmpy2.fsum(terms)
        inner = mpfr(g_bound) * gmpy2.fsum([c * abs(v) for c, v in zip(ladder.column_scale(), vals)])
        mag = max(max((abs(x) for x in terms), default=mpfr(0)), inner)
        scale = max(abs(total), mpfr(1e-30))
        pol.check_cancellation(mag, scale, "tranche-loss mixture")
        return float(total)


def _check_deck(spec: ContagionSpec, deck: TrancheDeck):
    if deck.n_obligors != spec.n:
        raise ValueError("deck recovery vector and spec disagree on N")


def _closed_form(kind: str, spec, deck, i, t, ajd, precision) -> float:
    if spec.kind != kind:
        raise ValueError(f"expected a {kind} spec, got {spec.kind}")
    _check_deck(spec, deck)
    if deck.recovery.homogeneous_rate is None:
        raise ValueError("closed-form tranche loss needs a homogeneous recovery")
    if t == 0:
        return 0.0
    ladder = _ladder_for(spec, precision)
    with precision.context():
        lo, hi = deck.bounds(i)
        rate = deck.recovery.homogeneous_rate
        gamma = ladder.tranche_gamma(lo, hi, rate, spec.n)
    bound = (1.0 - rate) * ladder.top / spec.n
    return _ladder_expectation(ladder, _transform_ladder(ajd, ladder), gamma, t, bound)


def expected_tranche_loss_hcm(spec: ContagionSpec, deck: TrancheDeck, i: int, t: float,
                              ajd: AJDParams, precision: PrecisionPolicy = DEFAULT_PRECISION) -> float:
    """``E[L^(i)(X_t)]`` under homogeneous contagion."""
    return _closed_form("hcm", spec, deck, i, t, ajd, precision)


def expected_tranche_loss_ncm(spec: ContagionSpec, deck: TrancheDeck, i: int, t: float,
                              ajd: AJDParams, precision: PrecisionPolicy = DEFAULT_PRECISION) -> float:
    """``E[L^(i)(X_t)]`` under near-neighbour contagion."""
    return _closed_form("ncm", spec, deck, i, t, ajd, precision)


# ---------------------------------------------------------------------------
# brute-force enumeration over default sets and orders
# ---------------------------------------------------------------------------

class _Enumeration:
    """Mixture coefficients of ``P(X_t = F)`` for every reachable ``F``."""

    def __init__(self, spec: ContagionSpec, precision: PrecisionPolicy):
        if spec.n > GENERAL_MAX_N:
            raise ValueError(f"general enumeration is limited to N <= {GENERAL_MAX_N}")
        self.spec = spec
        self.precision = precision
        n = spec.n
        with precision.context():
            self.table = path_mixture_coefficients(spec, ObligorSet.empty(n), None, precision)
        rates = {}
        for row in self.table.values():
            for hb in row:
                if hb not in rates:
                    rates[hb] = aggregate_load(spec, ObligorSet(hb, n))
        self.rate_of = rates
        self.transforms: dict = {}

    def functional(self, g: Callable[[ObligorSet], float]) -> dict:
        """``{rate: coeff}`` such that ``E[g(X_t)] = sum coeff * E[e^{-rate z}]``."""
        n = self.spec.n
        out: dict = {}
        with self.precision.context():
            for fb, row in self.table.items():
                val = g(ObligorSet(fb, n))
                if val == 0.0:
                    continue
                mv = mpfr(val)
                for hb, c in row.items():
                    r = self.rate_of[hb]
                    out[r] = out.get(r, 0) + mv * c
        return out

    def expectation(self, coeffs: dict, ajd: AJDParams, t: float) -> float:
        with self.precision.context():
            tl = self.transforms.get(ajd)
            if tl is None:
                self.rates = sorted(set(self.rate_of.values()))
                tl = TransformLadder(ajd, self.rates)
                self.transforms[ajd] = tl
            vals = dict(zip(self.rates, tl.values(t)))
            return float(gmpy2.fsum([c * vals[r] for r, c in coeffs.items()]))


_ENUM_CACHE: dict = {}


def _enumeration(spec, precision) -> _Enumeration:
    key = (id(spec), precision)
    hit = _ENUM_CACHE.get(key)
    if hit is None or hit.spec is not spec:
        hit = _Enumeration(spec, precision)
        if len(_ENUM_CACHE) > 32:
            _ENUM_CACHE.clear()
        _ENUM_CACHE[key] = hit
    return hit


def expected_tranche_loss_general(spec: ContagionSpec, deck: TrancheDeck, i: int, t: float,
                                  ajd: AJDParams,
                                  precision: PrecisionPolicy = DEFAULT_PRECISION) -> float:
    """``E[L^(i)(X_t)]`` by summing over every default set and every order
    in which it can be reached (small portfolios only)."""
    _check_deck(spec, deck)
    if t == 0:
        return 0.0
    enum = _enumeration(spec, precision)
    coeffs = enum.functional(lambda F: tranche_loss(deck, i, F))
    return enum.expectation(coeffs, ajd, t)


# ---------------------------------------------------------------------------
# loss curves and spreads
# ---------------------------------------------------------------------------

def loss_curve(spec: ContagionSpec, deck: TrancheDeck, ajd: AJDParams,
               precision: PrecisionPolicy = DEFAULT_PRECISION, method: str = "auto") -> LossCurve:
    """Expected losses of every tranche on the payment grid.

    ``method`` is ``closed`` (hcm/ncm ladder), ``general`` (enumeration) or
    ``auto`` (closed form when available).
    """
    _check_deck(spec, deck)
    times = np.asarray(deck.pay_times)
    k = deck.n_tranches
    values = np.zeros((k, len(times)))
    frac = np.zeros(len(times))
    if method == "auto":
        closed = spec.kind in ("hcm", "ncm") and deck.recovery.homogeneous_rate is not None
        method = "closed" if closed else "general"
    n = spec.n
    if method == "closed":
        ladder = _ladder_for(spec, precision)
        tl = _transform_ladder(ajd, ladder)
        rate = deck.recovery.homogeneous_rate
        with precision.context():
            gammas = [ladder.tranche_gamma(*deck.bounds(i), rate, n) for i in range(1, k + 1)]
            gcount = [g / n for g in ladder.ramp_gamma(0)]
        bound = (1.0 - rate) * ladder.top / n
        for j, t in enumerate(times):
            if t == 0.0:
                continue
            for i in range(k):
                values[i, j] = _ladder_expectation(ladder, tl, gammas[i], t, bound)
            frac[j] = _ladder_expectation(ladder, tl, gcount, t, ladder.top / n)
    elif method == "general":
        enum = _enumeration(spec, precision)
        coeffs = [enum.functional(lambda F, i=i: tranche_loss(deck, i, F)) for i in range(1, k + 1)]
        ccount = enum.functional(lambda F: len(F) / n)
        for j, t in enumerate(times):
            if t == 0.0:
                continue
            for i in range(k):
                values[i, j] = enum.expectation(coeffs[i], ajd, t)
            frac[j] = enum.expectation(ccount, ajd, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    return LossCurve(times, values, frac)


def _legs(deck: TrancheDeck, el: np.ndarray, width: float, outstanding=None):
    """Discounted default leg and premium annuity for one loss row."""
    t = np.asarray(deck.pay_times)
    disc = np.exp(-deck.r * t[1:])
    dt = np.diff(t)
    default_leg = math.fsum(disc * np.diff(el))
    if outstanding is None:
        if deck.premium_timing == "start":
            lost = el[:-1]
        elif deck.premium_timing == "end":
            lost = el[1:]
        else:
            lost = 0.5 * (el[:-1] + el[1:])
        outstanding = width - lost
    annuity = math.fsum(disc * outstanding * dt)
    return default_leg, annuity


def tranche_spread(deck: TrancheDeck, i: int, curve: LossCurve) -> float:
    """Running spread of tranche ``i`` in bp that balances the two legs,
    net of its upfront payment."""
    width = deck.width(i)
    dl, ann = _legs(deck, curve.values[i - 1], width)
    if not ann > 0.0:
        raise DegenerateTranche(f"tranche {i} has a zero premium leg")
    return (dl - deck.upfront[i - 1] * width) / ann * 1e4


def upfront_rate(deck: TrancheDeck, i: int, curve: LossCurve, running_bp: float = 0.0) -> float:
    """Upfront fraction of tranche notional that balances the legs for a
    fixed running spread."""
    width = deck.width(i)
    dl, ann = _legs(deck, curve.values[i - 1], width)
    return (dl - running_bp * 1e-4 * ann) / width


def index_spread(deck: TrancheDeck, curve_total, convention: str = "tranche") -> float:
    """Index spread in bp.

    ``curve_total`` is either a :class:`LossCurve` or an array of expected
    pool losses on the grid.  A curve whose tranches span ``[0, 1]`` gives
    the pool loss as their sum; otherwise the recovery must be homogeneous
    and the pool loss is ``(1 - R)`` times the expected default fraction.
    The ``tranche`` convention prices the index as the ``[0, 1]`` tranche
    with no upfront; the ``market`` convention accrues the premium on the
    surviving name count instead of the loss-reduced notional.
    """
    if isinstance(curve_total, LossCurve):
        frac = curve_total.default_fraction
        rate = deck.recovery.homogeneous_rate
        if deck.attach[0] == 0.0 and deck.attach[-1] == 1.0:
            pool = curve_total.values.sum(axis=0)
        elif rate is not None:
            pool = (1.0 - rate) * np.asarray(frac)
        else:
            raise ValueError("index spread needs tranches spanning [0, 1] or a homogeneous recovery")
    else:
        pool = np.asarray(curve_total, dtype=float)
        frac = None
    if convention == "tranche":
        dl, ann = _legs(deck, pool, 1.0)
    elif convention == "market":
        if frac is None:
            raise ValueError("market convention needs the expected default fraction")
        dl, _ = _legs(deck, pool, 1.0)
        _, ann = _legs(deck, pool, 1.0, outstanding=1.0 - frac[:-1])
    else:
        raise ValueError(f"unknown index convention {convention!r}")
    if not ann > 0.0:
        raise DegenerateTranche("index has a zero premium leg")
    return dl / ann * 1e4


def spreads(spec: ContagionSpec, deck: TrancheDeck, ajd: AJDParams,
            precision: PrecisionPolicy = DEFAULT_PRECISION) -> list:
    """Spreads in bp for every tranche of the deck."""
    curve = loss_curve(spec, deck, ajd, precision)
    return [tranche_spread(deck, i, curve) for i in range(1, deck.n_tranches + 1)]


def precision_self_check(spec: ContagionSpec, deck: TrancheDeck, ajd: AJDParams,
                         precision: PrecisionPolicy = DEFAULT_PRECISION,
                         rel_tol: float = 1e-9) -> float:
    """Reprice at doubled precision; raise :class:`PrecisionLoss` if any
    spread moves by more than ``rel_tol`` relative.  Returns the worst move."""
    base = spreads(spec, deck, ajd, precision)
    fine = spreads(spec, deck, ajd, precision.doubled())
    worst = 0.0
    for a, b in zip(base, fine):
        scale = max(abs(b), 1e-300)
        worst = max(worst, abs(a - b) / scale if b != 0 else abs(a))
    if worst > rel_tol:
        raise PrecisionLoss(f"spreads move by {worst:.3e} relative when precision doubles")
    return worst


# ---------------------------------------------------------------------------
# default counts and attachment / detachment times
# ---------------------------------------------------------------------------

def loss_count_distribution(spec: ContagionSpec, t: float, ajd: AJDParams,
                            precision: PrecisionPolicy = DEFAULT_PRECISION) -> np.ndarray:
    """``P(|X_t| = n)`` for ``n = 0..N``."""
    n = spec.n
    out = np.zeros(n + 1)
    if t == 0:
        out[0] = 1.0
        return out
    if spec.kind not in ("hcm", "ncm"):
        enum = _enumeration(spec, precision)
        for m in range(n + 1):
            c = enum.functional(lambda F, m=m: 1.0 if len(F) == m else 0.0)
            out[m] = enum.expectation(c, ajd, t) if c else 0.0
        return out
    ladder = _ladder_for(spec, precision)
    tl = _transform_ladder(ajd, ladder)
    with precision.context():
        vals = tl.values(t)
        for m in range(ladder.top + 1):
            terms = [ladder.weights[m] * ladder.alphas[m][i] * vals[i] for i in range(m + 1)]
            total = gmpy2.fsum(terms)
            mag = max(abs(x) for x in terms)
            precision.check_cancellation(mag, max(abs(total), mpfr(1e-30)), "default-count mixture")
            out[m] = float(total)
    return out


def expected_default_count(spec: ContagionSpec, t: float, ajd: AJDParams,
                           precision: PrecisionPolicy = DEFAULT_PRECISION) -> float:
    """``E|X_t|``, the expected number of defaulted names."""
    if t == 0:
        return 0.0
    n = spec.n
    if spec.kind not in ("hcm", "ncm"):
        enum = _enumeration(spec, precision)
        return enum.expectation(enum.functional(lambda F: float(len(F))), ajd, t)
    ladder = _ladder_for(spec, precision)
    with precision.context():
        gamma = ladder.ramp_gamma(0)
    return _ladder_expectation(ladder, _transform_ladder(ajd, ladder), gamma, t, ladder.top)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


_ROUNDING = {"half_up": _round_half_up, "ceil": math.ceil, "floor": math.floor}


def detach_counts(deck: TrancheDeck, rounding: str = "half_up") -> list:
    """Default counts ``round(V_i)`` that wipe out each tranche, where
    ``V_i = N p_i / (1 - R)``."""
    rate = deck.recovery.homogeneous_rate
    if rate is None:
        raise ValueError("detachment counts need a homogeneous recovery")
    fn = _ROUNDING[rounding]
    n = deck.n_obligors
    # the tiny shave keeps representable ties such as 6.25 * 4 on the right side
    return [min(n, int(fn(round(n * p / (1.0 - rate), 9)))) for p in deck.attach[1:]]


def attach_detach_times(spec: ContagionSpec, deck: TrancheDeck, ajd: AJDParams,
                        precision: PrecisionPolicy = DEFAULT_PRECISION,
                        rounding: str = "half_up", zero_attach: str = "first_default",
                        t_max: float = 2000.0, xtol: float = 1e-6) -> list:
    """``(t_attach, t_detach)`` per tranche: the first times the expected
    default count reaches the attachment and detachment counts.

    The attachment count of a tranche is the detachment count of the one
    below.  For the bottom tranche ``zero_attach`` selects between reporting
    0 (``zero``) or the time the expected count reaches one
    (``first_default``).  Thresholds the expected count never reaches before
    ``t_max`` are reported as ``inf``.
    """
    det = detach_counts(deck, rounding)
    first = 1 if zero_attach == "first_default" else 0
    att = [first] + det[:-1]
    cache: dict = {}

    def count(t):
        v = cache.get(t)
        if v is None:
            v = expected_default_count(spec, t, ajd, precision)
            cache[t] = v
        return v

    def hit_time(level):
        if level <= 0:
            return 0.0
        lo, hi = 0.0, 0.25
        while count(hi) < level:
            lo, hi = hi, 2.0 * hi
            if hi > t_max:
                return math.inf if count(t_max) < level else _solve(lo, t_max, level)
        return _solve(lo, hi, level)

    def _solve(lo, hi, level):
        return brentq(lambda t: count(t) - level, lo, hi, xtol=xtol)

    return [(hit_time(a), hit_time(d)) for a, d in zip(att, det)]
