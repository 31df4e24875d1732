r"""Hypoexponential mixture coefficients.

For distinct rates ``l_0, ..., l_n`` the iterated convolution

.. math:: \mathcal H_n(z) = (e^{-l_0 \cdot} * e^{-l_1 \cdot} * \cdots * e^{-l_n \cdot})(z)

collapses to ``sum_i alpha_i * exp(-l_i * z)``.  The coefficients follow the
recursion ``alpha^(m)_i = alpha^(m-1)_i / (l_m - l_i)`` with the new diagonal
entry taken from its product form, so that every ``alpha^(m)_m`` equals
``-sum_{i<m} alpha^(m)_i``.  They live in MPFR arithmetic because for long
rate ladders they reach enormous magnitudes with alternating signs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr
from scipy import integrate

from .precision import DEFAULT_PRECISION, PrecisionLoss, PrecisionPolicy

__all__ = [
    "RateCollision",
    "AlphaTable",
    "check_distinct",
    "alpha_coeffs",
    "alpha_triangle",
    "alpha_product_form",
    "hypoexp_mix",
    "hypoexp_mix_integral",
]


class RateCollision(ArithmeticError):
    """Two rates of a ladder coincide within the collision tolerance."""

    def __init__(self, i: int, j: int, li, lj):
        self.pair = (i, j)
        self.values = (float(li), float(lj))
        super().__init__(
            f"rates l_{i}={float(li)!r} and l_{j}={float(lj)!r} coincide; "
            "the mixture needs pairwise distinct rates"
        )


@dataclass(frozen=True)
class AlphaTable:
    rates: tuple
    coeffs: tuple
    precision: PrecisionPolicy
    # computed sum of the coefficients, zero in exact arithmetic (sentinel)
    residual: object = 0

    @property
    def order(self) -> int:
        return len(self.rates) - 1

    def as_float(self) -> np.ndarray:
        return np.array([float(c) for c in self.coeffs])


def check_distinct(rates: Sequence, tol: float) -> None:
    """Raise :class:`RateCollision` naming the first colliding pair."""
    order = sorted(range(len(rates)), key=lambda k: rates[k])
    for a, b in zip(order, order[1:]):
        la, lb = rates[a], rates[b]
        scale = max(abs(la), abs(lb))
        if abs(lb - la) <= tol * scale or la == lb:
            i, j = sorted((a, b))
            raise RateCollision(i, j, rates[i], rates[j])


def alpha_triangle(rates: Sequence, precision: PrecisionPolicy = DEFAULT_PRECISION,
                   check: bool = True) -> list[list]:
    """All coefficient rows ``alpha^(m)`` for ``m = 0..n`` of a rate ladder.

    Must be called inside ``precision.context()`` when the rates are already
    MPFR values; plain floats are converted exactly.

    Off-diagonal entries follow ``alpha^(m)_i = alpha^(m-1)_i / (l_m - l_i)``
    and the diagonal uses its product form, so every entry is built from
    products and quotients only and carries full relative precision.  The
    zero-sum identity of each row is left to :func:`alpha_coeffs` as a check.
    """
    ls = [mpfr(x) for x in rates]
    if check:
        check_distinct(ls, precision.collision_rel_tol)
    rows = [[mpfr(1)]]
    for m in range(1, len(ls)):
        lm = ls[m]
        row = [c / (lm - ls[i]) for i, c in enumerate(rows[-1])]
        diag = mpfr(1)
        for lj in ls[:m]:
            diag /= lj - lm
        row.append(diag)
        rows.append(row)
    return rows


def alpha_coeffs(rates: Sequence[float], precision: PrecisionPolicy = DEFAULT_PRECISION) -> AlphaTable:
    """Coefficients ``alpha^(n)_0..alpha^(n)_n`` for ``n = len(rates) - 1``."""
    if len(rates) == 0:
        raise ValueError("need at least one rate")
    with precision.context():
        ls = [mpfr(x) for x in rates]
        rows = alpha_triangle(ls, precision)
        last = rows[-1]
        residual = mpfr(0)
        if len(ls) > 1:
            # the coefficients of a mixture with distinct rates sum to zero
            residual = gmpy2.fsum(last)
            scale = max(abs(c) for c in last)
            bound = scale * mpfr(2) ** (-(precision.mantissa_bits // 2))
            if abs(residual) > bound:
                raise PrecisionLoss("alpha coefficients do not sum to zero")
        return AlphaTable(tuple(ls), tuple(last), precision, residual)


def alpha_product_form(rates: Sequence[float], precision: PrecisionPolicy = DEFAULT_PRECISION) -> tuple:
    """Independent cross-check: ``alpha_i = prod_{j != i} 1 / (l_j - l_i)``."""
    with precision.context():
        ls = [mpfr(x) for x in rates]
        check_distinct(ls, precision.collision_rel_tol)
        out = []
        for i, li in enumerate(ls):
            prod = mpfr(1)
            for j, lj in enumerate(ls):
                if j != i:
                    prod *= lj - li
            out.append(1 / prod)
        return tuple(out)


def hypoexp_mix(table: AlphaTable, z: float) -> float:
    """Evaluate ``sum_i alpha_i exp(-l_i z)`` at working precision."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    with table.precision.context():
        zz = mpfr(z)
        terms = [c * gmpy2.exp(-l * zz) for c, l in zip(table.coeffs, table.rates)]
        return float(gmpy2.fsum(terms))


def hypoexp_mix_integral(rates: Sequence[float], z: float, epsrel: float = 1e-12) -> float:
    """Slow oracle: the iterated convolution evaluated by adaptive quadrature.

    The convolution is associative, so the chain is split into a balanced
    tree of pairwise convolutions, each computed with ``scipy.integrate.quad``
    (no use of the closed-form coefficients).
    """
    rates = [float(x) for x in rates]
    if len(rates) - 1 > 6:
        raise ValueError("quadrature oracle is limited to n <= 6")
    if z < 0:
        raise ValueError("z must be nonnegative")

    def build(lo, hi):
        if hi - lo == 1:
            rate = rates[lo]
            return lambda x: np.exp(-rate * x)
        mid = (lo + hi) // 2
        left, right = build(lo, mid), build(mid, hi)

        def conv(x):
            if x <= 0.0:
                return 0.0
            val, _ = integrate.quad(lambda u: left(x - u) * right(u), 0.0, x,
                                    epsabs=0.0, epsrel=epsrel, limit=200)
            return val

        return conv

    return float(build(0, len(rates))(float(z)))
