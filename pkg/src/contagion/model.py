"""Portfolio and contagion data model.

Obligors are labelled ``1..N``.  The state of the default process is the set
of obligors that have defaulted so far, stored as an :class:`ObligorSet`
bitmask.  A :class:`ContagionSpec` fixes the base intensities ``beta``, the
contagion matrix ``rho`` (``rho[j, i]`` is the rate pushed from a defaulted
``j`` onto a survivor ``i``, both zero-based in the array) and the magnitude
function ``h(n) = exp(-delta * n)``.

The intensity of the jump ``E -> E + {i}`` is ``phi * load(E, i)`` where::

    load(E, i) = beta_i                              if E is empty
               = h(|E|) * sum_{j in E} rho[j, i]     otherwise
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "MAX_OBLIGORS",
    "ContractViolation",
    "ObligorSet",
    "ContagionSpec",
    "RecoveryVector",
    "contagion_load",
    "aggregate_load",
    "path_load",
    "intensity",
    "identity_phi",
]

MAX_OBLIGORS = 128


class ContractViolation(ValueError):
    """An operation was called outside its documented precondition."""


@dataclass(frozen=True)
class ObligorSet:
    """Immutable set of obligor labels drawn from ``1..n_total``."""

    bits: int
    n_total: int

    def __post_init__(self):
        if not 1 <= self.n_total <= MAX_OBLIGORS:
            raise ValueError(f"n_total must be in 1..{MAX_OBLIGORS}, got {self.n_total}")
        if self.bits < 0 or self.bits >> self.n_total:
            raise ValueError("bitmask has bits outside 1..n_total")

    @classmethod
    def empty(cls, n_total: int) -> "ObligorSet":
        return cls(0, n_total)

    @classmethod
    def full(cls, n_total: int) -> "ObligorSet":
        return cls((1 << n_total) - 1, n_total)

    @classmethod
    def of(cls, n_total: int, members: Iterable[int]) -> "ObligorSet":
        bits = 0
        for i in members:
            if not 1 <= i <= n_total:
                raise IndexError(f"obligor {i} outside 1..{n_total}")
            bits |= 1 << (i - 1)
        return cls(bits, n_total)

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __contains__(self, i: int) -> bool:
        return 1 <= i <= self.n_total and bool(self.bits >> (i - 1) & 1)

    def __iter__(self) -> Iterator[int]:
        b = self.bits
        while b:
            low = b & -b
            yield low.bit_length()
            b ^= low

    def __repr__(self) -> str:
        return f"ObligorSet({sorted(self)}, N={self.n_total})"

    def add(self, i: int) -> "ObligorSet":
        if not 1 <= i <= self.n_total:
            raise IndexError(f"obligor {i} outside 1..{self.n_total}")
        return ObligorSet(self.bits | 1 << (i - 1), self.n_total)

    def union(self, other: "ObligorSet") -> "ObligorSet":
        return ObligorSet(self.bits | other.bits, self.n_total)

    def difference(self, other: "ObligorSet") -> "ObligorSet":
        return ObligorSet(self.bits & ~other.bits, self.n_total)

    def complement(self) -> "ObligorSet":
        return ObligorSet(((1 << self.n_total) - 1) & ~self.bits, self.n_total)

    def issubset(self, other: "ObligorSet") -> bool:
        return self.bits & ~other.bits == 0

    def is_full(self) -> bool:
        return self.bits == (1 << self.n_total) - 1


@dataclass(frozen=True, eq=False)
class ContagionSpec:
    """Base intensities, contagion matrix and contagion-magnitude exponent.

    Use the :meth:`general`, :meth:`hcm` and :meth:`ncm` constructors; they
    validate the structure that the closed-form fast paths rely on.
    """

    beta: np.ndarray
    rho: np.ndarray
    delta: float
    kind: str = "general"
    # scalar parameters of the structured models (rho for hcm, (p, q) for ncm)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        rho = np.array(self.rho, dtype=float)
        n = beta.shape[0]
        if beta.ndim != 1 or not 1 <= n <= MAX_OBLIGORS:
            raise ValueError("beta must be a vector of length 1..128")
        if rho.shape != (n, n):
            raise ValueError(f"rho must be {n}x{n}, got {rho.shape}")
        if np.any(beta < 0) or np.any(rho < 0):
            raise ValueError("beta and rho must be nonnegative")
        if not np.isfinite(self.delta):
            raise ValueError("delta must be finite")
        if self.kind not in ("general", "hcm", "ncm"):
            raise ValueError(f"unknown kind {self.kind!r}")
        np.fill_diagonal(rho, 0.0)
        beta.flags.writeable = False
        rho.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "delta", float(self.delta))
        if self.kind == "hcm":
            r = self.params["rho"]
            off = rho[~np.eye(n, dtype=bool)]
            if off.size and not np.all(off == r):
                raise ValueError("hcm spec needs a constant off-diagonal rho")
        elif self.kind == "ncm":
            if n < 3:
                raise ValueError("ncm spec needs at least 3 obligors")
            p, q = self.params["p"], self.params["q"]
            expected = _ncm_matrix(n, p, q)
            if not np.array_equal(expected, rho):
                raise ValueError("ncm spec needs circular nearest-neighbour rho")

    # -- constructors -----------------------------------------------------
    @classmethod
    def general(cls, beta: Sequence[float], rho, delta: float = 0.0) -> "ContagionSpec":
        return cls(np.asarray(beta, float), np.asarray(rho, float), delta)

    @classmethod
    def hcm(cls, n: int, rho: float, delta: float, a0: float | None = None,
            beta: Sequence[float] | None = None) -> "ContagionSpec":
        """Homogeneous contagion: every defaulted name pushes ``rho`` onto
        every survivor.  Give either the full ``beta`` vector or the total
        ``a0``, which is split uniformly."""
        b = _resolve_beta(n, a0, beta)
        mat = np.full((n, n), float(rho))
        np.fill_diagonal(mat, 0.0)
        return cls(b, mat, delta, "hcm", {"rho": float(rho)})

    @classmethod
    def ncm(cls, n: int, p: float, q: float, delta: float, a0: float | None = None,
            beta: Sequence[float] | None = None) -> "ContagionSpec":
        """Near-neighbour contagion on the circle ``1 -> 2 -> ... -> N -> 1``:
        a default pushes ``p`` onto its successor and ``q`` onto its
        predecessor."""
        b = _resolve_beta(n, a0, beta)
        return cls(b, _ncm_matrix(n, p, q), delta, "ncm", {"p": float(p), "q": float(q)})

    # -- basic accessors --------------------------------------------------
    @property
    def n(self) -> int:
        return self.beta.shape[0]

    @property
    def a0(self) -> float:
        return math.fsum(self.beta)

    def h(self, k: int) -> float:
        """Contagion magnitude ``exp(-delta * k)``; ``h(0) == 1``."""
        return math.exp(-self.delta * k)

    def replace(self, **changes) -> "ContagionSpec":
        """Rebuild a structured spec with some scalar parameters changed
        (``a0``, ``rho``, ``delta``, ``p``, ``q``)."""
        if self.kind == "hcm":
            kw = dict(n=self.n, rho=self.params["rho"], delta=self.delta, a0=self.a0)
            kw.update(changes)
            return ContagionSpec.hcm(**kw)
        if self.kind == "ncm":
            kw = dict(n=self.n, p=self.params["p"], q=self.params["q"],
                      delta=self.delta, a0=self.a0)
            kw.update(changes)
            return ContagionSpec.ncm(**kw)
        beta = self.beta * (changes["a0"] / self.a0) if "a0" in changes else self.beta
        return ContagionSpec.general(beta, self.rho, changes.get("delta", self.delta))


@dataclass(frozen=True)
class RecoveryVector:
    r: tuple

    def __post_init__(self):
        r = tuple(float(x) for x in self.r)
        if not r:
            raise ValueError("empty recovery vector")
        if any(not 0.0 <= x < 1.0 for x in r):
            raise ValueError("recovery rates must lie in [0, 1)")
        object.__setattr__(self, "r", r)

    @classmethod
    def homogeneous(cls, n: int, rate: float) -> "RecoveryVector":
        return cls((float(rate),) * n)

    @property
    def n(self) -> int:
        return len(self.r)

    @property
    def homogeneous_rate(self) -> float | None:
        first = self.r[0]
        return first if all(x == first for x in self.r) else None


def _resolve_beta(n, a0, beta):
    if beta is not None:
        b = np.asarray(beta, dtype=float)
        if b.shape != (n,):
            raise ValueError(f"beta must have length {n}")
        if a0 is not None and not math.isclose(math.fsum(b), a0, rel_tol=1e-12):
            raise ValueError("a0 disagrees with sum(beta)")
        return b
    if a0 is None:
        raise ValueError("give a0 or beta")
    return np.full(n, float(a0) / n)


def _ncm_matrix(n, p, q):
    mat = np.zeros((n, n))
    for j in range(n):
        mat[j, (j + 1) % n] = p  # successor
        mat[j, (j - 1) % n] = q  # predecessor
    return mat


def _check_index(spec: ContagionSpec, i: int):
    if not 1 <= i <= spec.n:
        raise IndexError(f"obligor {i} outside 1..{spec.n}")


def contagion_load(spec: ContagionSpec, E: ObligorSet, i: int) -> float:
    """Rate at which survivor ``i`` defaults given defaulted set ``E``
    (before the macro scaling)."""
    _check_index(spec, i)
    if i in E:
        raise ContractViolation(f"obligor {i} has already defaulted")
    if not E.bits:
        return float(spec.beta[i - 1])
    col = spec.rho[:, i - 1]
    return spec.h(len(E)) * math.fsum(col[j - 1] for j in E)


def aggregate_load(spec: ContagionSpec, E: ObligorSet) -> float:
    """Total rate out of state ``E``; zero once every obligor has defaulted."""
    k = len(E)
    if k == 0:
        return spec.a0
    n = spec.n
    if k == n:
        return 0.0
    if spec.kind == "hcm":
        return spec.params["rho"] * (k * (n - k)) * spec.h(k)
    rows = [j - 1 for j in E]
    cols = [i - 1 for i in E.complement()]
    return spec.h(k) * math.fsum(spec.rho[np.ix_(rows, cols)].ravel())


def path_load(spec: ContagionSpec, start: ObligorSet, pi: Sequence[int]) -> float:
    """Product of the loads met along the chain ``start, start+{pi1}, ...``."""
    if len(set(pi)) != len(pi):
        raise ContractViolation("default order repeats an obligor")
    prod = 1.0
    cur = start
    for i in pi:
        if i in cur:
            raise ContractViolation(f"obligor {i} is already in the start set")
        prod *= contagion_load(spec, cur, i)
        if prod == 0.0:
            return 0.0
        cur = cur.add(i)
    return prod


def intensity(spec: ContagionSpec, E: ObligorSet, F: ObligorSet, phi_value: float) -> float:
    """Generator entry ``lambda_EF`` for a frozen macro level ``phi_value``."""
    if phi_value < 0:
        raise ContractViolation("phi_value must be nonnegative")
    if E.bits == F.bits:
        return -phi_value * aggregate_load(spec, E)
    new = F.bits & ~E.bits
    if not E.issubset(F) or new.bit_count() != 1:
        return 0.0
    return phi_value * contagion_load(spec, E, new.bit_length())


def identity_phi(t: float, y: float) -> float:
    """Macro scaling used throughout: the factor level itself."""
    return y
