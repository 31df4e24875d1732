"""Transition kernel of the default chain.

Three evaluators of ``G(s, t; E, F) = P[X_t = F | X_s = E, macro path]``:

* :func:`kernel_general` integrates the H-recursion numerically for arbitrary
  time-dependent intensity curves (small portfolios only).
* :func:`kernel_factorized` uses the hypoexponential closed form when the
  intensities factor as ``phi(t) * load(E, i)``; ``z`` is the integrated
  macro scaling over ``[s, t]``.
* :func:`kernel_row` returns the whole conditional law ``F -> G`` from one
  start set through a subset recursion on the mixture coefficients.

The factorized paths can also return their exponential-mixture coefficients,
``G(E, F; z) = sum_H c[H] * exp(-aggregate_load(H) * z)``, which is what the
pricing layer needs to take expectations over the macro factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import gmpy2
import numpy as np
from gmpy2 import mpfr
from numpy.polynomial import chebyshev as C

from .hypoexp import RateCollision
from .model import ContagionSpec, ObligorSet, aggregate_load, contagion_load
from .precision import DEFAULT_PRECISION, PrecisionPolicy

__all__ = [
    "KernelQuery",
    "kernel_general",
    "kernel_factorized",
    "kernel_row",
    "mixture_coefficients",
    "path_mixture_coefficients",
    "row_mixture_coefficients",
    "two_obligor_mode",
    "curves_from_spec",
    "GENERAL_MAX_N",
    "ROW_MAX_N",
]

GENERAL_MAX_N = 8
ROW_MAX_N = 25
# Above this many new defaults the permutation walk is replaced by the subset
# recursion, which yields identical coefficients at 3^n instead of n! cost.
_PERMUTATION_MAX_STEPS = 8

RateCurve = Callable[[ObligorSet, int, float], float]


@dataclass(frozen=True)
class KernelQuery:
    start: ObligorSet
    end: ObligorSet
    s: float
    t: float
    # integrated macro scaling over [s, t] (factorized evaluation)
    phi_integral: Optional[float] = None
    # rate(E, i, u) = lambda_{E, E+{i}}(u) (general evaluation)
    intensity_curves: Optional[RateCurve] = None

    def __post_init__(self):
        if self.t < self.s:
            raise ValueError("need s <= t")
        if self.start.n_total != self.end.n_total:
            raise ValueError("start and end sets belong to different portfolios")


def curves_from_spec(spec: ContagionSpec, phi: Callable[[float], float]) -> RateCurve:
    """Intensity curves ``phi(u) * load(E, i)`` for a deterministic scaling."""

    def rate(E: ObligorSet, i: int, u: float) -> float:
        return phi(u) * contagion_load(spec, E, i)

    return rate


# ---------------------------------------------------------------------------
# general kernel: Chebyshev representation of the H-recursion
# ---------------------------------------------------------------------------

class _ChebGrid:
    def __init__(self, s: float, t: float, n: int):
        self.s, self.t, self.n = s, t, n
        x = np.cos(np.pi * np.arange(n) / (n - 1))[::-1]  # Chebyshev-Lobatto on [-1, 1]
        self.x = x
        self.u = s + (t - s) * (x + 1.0) / 2.0
        self.half = (t - s) / 2.0

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """``int_s^u f`` at every node for samples ``values`` of ``f``."""
        coef = C.chebfit(self.x, values, self.n - 1)
        icoef = C.chebint(coef, lbnd=-1.0) * self.half
        return C.chebval(self.x, icoef)


def _general_at(q: KernelQuery, n_nodes: int) -> float:
    E, F = q.start, q.end
    rate = q.intensity_curves
    grid = _ChebGrid(q.s, q.t, n_nodes)
    cum_total: dict[int, np.ndarray] = {}

    def total_cum(S: ObligorSet) -> np.ndarray:
        got = cum_total.get(S.bits)
        if got is None:
            vals = np.zeros(grid.n)
            for i in S.complement():
                vals += np.array([rate(S, i, u) for u in grid.u])
            got = grid.cumulative(vals)
            cum_total[S.bits] = got
        return got

    new = list(F.difference(E))
    # H_0 on the grid, then one convolution step per default along each order;
    # orders sharing a prefix share the partial H values.
    h0 = np.exp(-total_cum(E))
    total = 0.0
    stack = [(E, h0, tuple(new))]
    while stack:
        cur, h, remaining = stack.pop()
        if not remaining:
            total += h[-1]
            continue
        for idx, i in enumerate(remaining):
            nxt = cur.add(i)
            lam = np.array([rate(cur, i, u) for u in grid.u])
            if not np.any(lam):
                continue
            lf = total_cum(nxt)
            # H_{k+1}(v') = exp(-Lf(v')) * int_s^{v'} lam(v) exp(Lf(v)) H_k(v) dv
            h_next = np.exp(-lf) * grid.cumulative(lam * np.exp(lf) * h)
            stack.append((nxt, h_next, remaining[:idx] + remaining[idx + 1:]))
    return float(total)


def kernel_general(q: KernelQuery, tol: float = 1e-12, max_nodes: int = 1025) -> float:
    """``G(s, t; E, F)`` for general intensity curves.

    Every ``H`` function is held as a Chebyshev interpolant on ``[s, t]``;
    the node count doubles until two successive results agree within ``tol``.
    """
    E, F = q.start, q.end
    if E.n_total > GENERAL_MAX_N:
        raise ValueError(f"kernel_general is limited to N <= {GENERAL_MAX_N}")
    if q.intensity_curves is None:
        raise ValueError("kernel_general needs intensity_curves")
    if not E.issubset(F):
        return 0.0
    if q.t == q.s:
        return 1.0 if E.bits == F.bits else 0.0
    n = 17
    prev = _general_at(q, n)
    while n < max_nodes:
        n = 2 * n - 1
        cur = _general_at(q, n)
        if abs(cur - prev) <= tol:
            return cur
        prev = cur
    raise ArithmeticError("kernel_general quadrature did not converge")


# ---------------------------------------------------------------------------
# factorized kernel: exponential-mixture coefficients
# ---------------------------------------------------------------------------

def _collision(precision, la, lb):
    scale = max(abs(la), abs(lb))
    return la == lb or abs(la - lb) <= precision.collision_rel_tol * scale


def path_mixture_coefficients(spec: ContagionSpec, E: ObligorSet, F: Optional[ObligorSet] = None,
                              precision: PrecisionPolicy = DEFAULT_PRECISION,
                              max_steps: Optional[int] = None) -> dict:
    """Walk every default order out of ``E`` and accumulate mixture terms.

    Returns ``{F_bits: {H_bits: coeff}}`` with MPFR coefficients, so that
    ``G(E, F; z) = sum_H coeff * exp(-aggregate_load(H) * z)``.  With ``F``
    given only orders ending in ``F`` are walked; otherwise every reachable
    set is produced.  Orders whose load product vanishes are pruned as soon
    as the zero factor appears.  Must run inside ``precision.context()``.
    """
    target = F
    allowed = (F.difference(E) if F is not None else E.complement())
    if max_steps is None:
        max_steps = len(allowed)
    out: dict[int, dict[int, object]] = {}
    rate_cache: dict[int, object] = {}

    def lbar(S: ObligorSet):
        r = rate_cache.get(S.bits)
        if r is None:
            r = mpfr(aggregate_load(spec, S))
            rate_cache[S.bits] = r
        return r

    def emit(S, weight, chain, alphas):
        bucket = out.setdefault(S.bits, {})
        for H, a in zip(chain, alphas):
            bucket[H.bits] = bucket.get(H.bits, 0) + weight * a

    one = mpfr(1)
    # stack entries: (current set, load product, chain of sets, chain rates, alpha row)
    stack = [(E, one, [E], [lbar(E)], [one])]
    while stack:
        S, weight, chain, rates, alphas = stack.pop()
        if target is None or S.bits == target.bits:
            emit(S, weight, chain, alphas)
        if len(chain) - 1 >= max_steps:
            continue
        for i in allowed:
            if i in S:
                continue
            load = contagion_load(spec, S, i)
            if load == 0.0:
                continue
            nxt = S.add(i)
            lm = lbar(nxt)
            for k, lk in enumerate(rates):
                if _collision(precision, lm, lk):
                    raise RateCollision(k, len(chain), lk, lm)
            row = [a / (lm - lk) for a, lk in zip(alphas, rates)]
            row.append(-gmpy2.fsum(row))
            stack.append((nxt, weight * mpfr(load), chain + [nxt], rates + [lm], row))
    return out


def row_mixture_coefficients(spec: ContagionSpec, E: ObligorSet,
                             precision: PrecisionPolicy = DEFAULT_PRECISION,
                             within: Optional[ObligorSet] = None) -> dict:
    """Subset recursion for the mixture coefficients of a whole kernel row.

    Writing ``G(E, F; z) = sum_H c[F][H] exp(-Lbar_H z)``, the forward
    equation ``dG_F/dz = -Lbar_F G_F + sum_i load(F-i, i) G_{F-i}`` gives
    ``c[F][H] = sum_i load(F-i, i) c[F-i][H] / (Lbar_F - Lbar_H)`` for
    ``H != F`` and ``c[F][F] = -sum_{H != F} c[F][H]`` from ``G_F(0) = 0``.
    Sets are visited in order of size.  Must run inside ``precision.context()``.
    """
    n = spec.n
    free = (within.difference(E) if within is not None else E.complement())
    free_bits = list(free)
    lbar: dict[int, object] = {}
    coeffs: dict[int, dict[int, object]] = {E.bits: {E.bits: mpfr(1)}}
    lbar[E.bits] = mpfr(aggregate_load(spec, E))
    frontier = [E.bits]
    for _ in range(len(free_bits)):
        nxt_level: dict[int, None] = {}
        for bits in frontier:
            for i in free_bits:
                if not bits >> (i - 1) & 1:
                    nxt_level[bits | 1 << (i - 1)] = None
        level = sorted(nxt_level)
        kept = []
        for fb in level:
            Fset = ObligorSet(fb, n)
            acc: dict[int, object] = {}
            for i in free_bits:
                if not fb >> (i - 1) & 1:
                    continue
                prev = fb & ~(1 << (i - 1))
                pc = coeffs.get(prev)
                if pc is None:
                    continue
                load = contagion_load(spec, ObligorSet(prev, n), i)
                if load == 0.0:
                    continue
                ml = mpfr(load)
                for hb, c in pc.items():
                    acc[hb] = acc.get(hb, 0) + ml * c
            if not acc:
                continue
            lf = mpfr(aggregate_load(spec, Fset))
            lbar[fb] = lf
            row = {}
            for hb, num in acc.items():
                lh = lbar[hb]
                if _collision(precision, lf, lh):
                    if num == 0:
                        continue
                    hs = ObligorSet(hb, n)
                    raise RateCollision(len(hs), len(Fset), lh, lf)
                row[hb] = num / (lf - lh)
            row[fb] = -gmpy2.fsum(list(row.values()))
            coeffs[fb] = row
            kept.append(fb)
        frontier = kept
        if not frontier:
            break
    return coeffs


def mixture_coefficients(spec: ContagionSpec, E: ObligorSet, F: ObligorSet,
                         precision: PrecisionPolicy = DEFAULT_PRECISION) -> dict:
    """``{H_bits: coeff}`` for a single kernel entry (inside the context)."""
    if not E.issubset(F):
        return {}
    steps = len(F) - len(E)
    if steps <= _PERMUTATION_MAX_STEPS:
        table = path_mixture_coefficients(spec, E, F, precision)
    else:
        table = row_mixture_coefficients(spec, E, precision, within=F)
    return table.get(F.bits, {})


def _evaluate(spec, coeffs: dict, z, memo: Optional[dict] = None) -> float:
    zz = mpfr(z)
    n = spec.n
    memo = {} if memo is None else memo
    terms = []
    for hb, c in coeffs.items():
        e = memo.get(hb)
        if e is None:
            e = gmpy2.exp(-mpfr(aggregate_load(spec, ObligorSet(hb, n))) * zz)
            memo[hb] = e
        terms.append(c * e)
    return float(gmpy2.fsum(terms)) if terms else 0.0


def kernel_factorized(spec: ContagionSpec, E: ObligorSet, F: ObligorSet, z: float,
                      precision: PrecisionPolicy = DEFAULT_PRECISION) -> float:
    """Closed-form kernel for intensities ``phi * load``; ``z`` is the
    integrated scaling over the interval."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    if not E.issubset(F):
        return 0.0
    if E.bits == F.bits:
        return math.exp(-aggregate_load(spec, E) * z)
    with precision.context():
        return _evaluate(spec, mixture_coefficients(spec, E, F, precision), z)


def kernel_row(spec: ContagionSpec, E: ObligorSet, z: float,
               precision: PrecisionPolicy = DEFAULT_PRECISION) -> dict:
    """Full conditional law ``{F: probability}`` over reachable ``F >= E``.

    Unreachable supersets (zero probability for every ``z``) are omitted.
    """
    if spec.n > ROW_MAX_N:
        raise ValueError(f"kernel_row enumerates subsets only for N <= {ROW_MAX_N}")
    if z < 0:
        raise ValueError("z must be nonnegative")
    if z == 0:
        return {E: 1.0}
    n = spec.n
    with precision.context():
        table = row_mixture_coefficients(spec, E, precision)
        memo: dict = {}
        return {ObligorSet(fb, n): _evaluate(spec, c, z, memo) for fb, c in sorted(table.items())}


def two_obligor_mode(lam: float) -> float:
    """Elapsed time maximizing ``P[X_t = {i} | X_s = empty]`` when both
    names default at rate ``lam`` and contagion leaves the rate unchanged."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return math.log(2.0) / lam
