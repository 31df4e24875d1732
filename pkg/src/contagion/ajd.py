"""Laplace transform of the integrated macro factor.

The factor follows a square-root diffusion with exponential jumps::

    dY = kappa (theta - Y) dt + sigma sqrt(Y) dW + dJ,   Y_0 = y0,

where ``J`` is compound Poisson with intensity ``l`` and Exp(mean ``mu``)
marks.  For ``g > 0``, ``E[exp(-g int_0^t Y ds)] = exp(A + y0 B)`` in closed
form.  The logarithms in ``A`` are evaluated through ``log1p``/``expm1`` so the
formula stays accurate for small ``t`` and in the ``sigma -> 0`` limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr
from scipy.integrate import solve_ivp

__all__ = [
    "AJDParams",
    "TransformValue",
    "OracleDomainError",
    "transform",
    "expectation",
    "riccati_oracle",
    "TransformLadder",
]


class OracleDomainError(ArithmeticError):
    pass


@dataclass(frozen=True)
class AJDParams:
    kappa: float
    theta: float
    sigma: float
    l: float
    mu: float
    y0: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        for name in ("theta", "l", "mu", "y0"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")

    def replace(self, **kw) -> "AJDParams":
        d = self.__dict__.copy()
        d.update(kw)
        return AJDParams(**d)

    def mean(self, t: float) -> float:
        """``E[Y_t]``: solves ``m' = kappa (theta - m) + l mu``."""
        level = self.theta + self.l * self.mu / self.kappa
        return level + (self.y0 - level) * math.exp(-self.kappa * t)


@dataclass(frozen=True)
class TransformValue:
    a: float
    b: float

    def value(self, y0: float) -> float:
        return math.exp(self.a + y0 * self.b)


class _Coefficients:
    """Time-independent pieces of the closed form for one ``g``.

    ``m`` is the math namespace: :mod:`math` for doubles or :mod:`gmpy2`
    for MPFR values.
    """

    __slots__ = ("m", "g", "gamma", "c1", "d1", "c2", "d2", "b",
                 "k1", "k2", "k3", "k4", "p")

    def __init__(self, p: AJDParams, g, m):
        self.m = m
        one = g / g
        kappa, theta, sigma = p.kappa * one, p.theta * one, p.sigma * one
        l, mu = p.l * one, p.mu * one
        self.p = p
        self.g = g
        gamma = m.sqrt(kappa * kappa + 2 * g * sigma * sigma)
        c1 = -(gamma + kappa) / (2 * g)
        d1 = c1 + kappa / g
        c2 = 1 - mu / c1
        d2 = (d1 + mu) / c1
        b = d1 * g + g * (kappa * c1 - sigma * sigma) / gamma
        self.gamma, self.c1, self.d1, self.c2, self.d2, self.b = gamma, c1, d1, c2, d2, b
        # A = k1 * E1 * f(u1) + k2 * t + k3 * E1 * f(u2) + k4 * t with E1 = e^{bt} - 1
        # and f(u) = log1p(u) / u; algebraically the printed form with the
        # 1/d1 and 1/d2 prefactors cancelled against the logarithms.
        self.k1 = -kappa * theta / (b * c1)
        self.k2 = kappa * theta / c1
        self.k3 = l * (c2 * d1 - c1 * d2) / (b * c1 * c2 * (c2 + d2))
        self.k4 = l / c2 - l

    def _flog(self, u):
        if u == 0:
            return u * 0 + 1
        if u <= -1:
            raise OracleDomainError(
                f"log of nonpositive argument in transform (g={float(self.g)}, params={self.p})"
            )
        return self.m.log1p(u) / u

    def ab(self, t):
        m = self.m
        e1 = m.expm1(self.b * t)
        denom = -self.gamma / self.g + self.d1 * e1  # c1 + d1 e^{bt}
        if denom >= 0:
            raise OracleDomainError(f"c1 + d1 e^(bt) >= 0 (g={float(self.g)}, t={float(t)})")
        B = -e1 / denom
        u1 = -self.g * self.d1 * e1 / self.gamma
        u2 = self.d2 * e1 / (self.c2 + self.d2)
        A = (self.k1 * e1 * self._flog(u1) + self.k2 * t
             + self.k3 * e1 * self._flog(u2) + self.k4 * t)
        return A, B

    def log_expectation(self, t):
        A, B = self.ab(t)
        return A + self.p.y0 * B


def _check_g(g):
    if not g > 0:
        raise ValueError(f"transform needs g > 0, got {float(g)}")


def transform(p: AJDParams, g: float, t: float) -> TransformValue:
    """Closed-form ``(A(g,0,t), B(g,0,t))`` in double precision."""
    _check_g(g)
    if t < 0:
        raise ValueError("t must be nonnegative")
    A, B = _Coefficients(p, float(g), math).ab(float(t))
    return TransformValue(A, B)


def expectation(p: AJDParams, g: float, t: float) -> float:
    """``E[exp(-g int_0^t Y ds)]``; equals 1 for ``g == 0`` or ``t == 0``."""
    if g == 0 or t == 0:
        return 1.0
    tv = transform(p, g, t)
    return math.exp(tv.a + p.y0 * tv.b)


def riccati_oracle(p: AJDParams, g: float, t: float, rtol: float = 1e-12,
                   atol: float = 1e-14) -> TransformValue:
    """Integrate the affine Riccati system numerically.

    ``B' = -g - kappa B + sigma^2 B^2 / 2`` and
    ``A' = kappa theta B + l (1 / (1 - mu B) - 1)`` from ``A(0) = B(0) = 0``.
    """
    if t == 0:
        return TransformValue(0.0, 0.0)

    def rhs(_, y):
        a, b = y
        if p.mu * b >= 1.0:
            raise OracleDomainError("mu * B reached 1")
        return [p.kappa * p.theta * b + p.l * (1.0 / (1.0 - p.mu * b) - 1.0),
                -g - p.kappa * b + 0.5 * p.sigma ** 2 * b * b]

    sol = solve_ivp(rhs, (0.0, float(t)), [0.0, 0.0], method="DOP853",
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise OracleDomainError(sol.message)
    return TransformValue(float(sol.y[0, -1]), float(sol.y[1, -1]))


class TransformLadder:
    """MPFR transform values for a fixed list of rates, cached per time.

    Rates equal to zero give the trivial expectation 1.  Must be used inside
    the precision context that created it.
    """

    def __init__(self, p: AJDParams, rates):
        self.p = p
        self.rates = list(rates)
        self._coef = [None if r == 0 else _Coefficients(p, mpfr(r), gmpy2) for r in self.rates]
        self._cache: dict[float, list] = {}

    def values(self, t: float) -> list:
        t = float(t)
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        one = mpfr(1)
        if t == 0.0:
            out = [one] * len(self.rates)
        else:
            tt = mpfr(t)
            out = [one if c is None else gmpy2.exp(c.log_expectation(tt)) for c in self._coef]
        self._cache[t] = out
        return out
