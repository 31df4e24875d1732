"""Fit the homogeneous contagion model to tranche quotes.

The parameter vector is ``x = (a0, rho, delta, kappa, theta, sigma, mu, l,
y0)``.  The objective is the sum of squared relative errors of the model
quotes against bid/ask mids; upfront-quoted tranches are compared as upfront
percentages at a fixed running spread, running-quoted tranches and the index
as spreads in bp.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import bisect, least_squares, minimize
from scipy.stats import qmc

from .ajd import AJDParams, OracleDomainError
from .hypoexp import RateCollision
from .model import ContagionSpec, RecoveryVector
from .precision import PrecisionLoss, PrecisionPolicy
from .pricing import (DegenerateTranche, TrancheDeck, index_spread, loss_curve,
                      suggest_precision, tranche_spread, upfront_rate)

__all__ = [
    "PARAM_NAMES",
    "TrancheQuote",
    "QuoteSet",
    "QuoteError",
    "load_quotes",
    "CalibrationBox",
    "CalibrationSettings",
    "CalibrationResult",
    "CalibrationFailed",
    "NoRoot",
    "PENALTY",
    "model_quotes",
    "objective",
    "residuals",
    "calibrate",
    "aape",
    "implied_rho",
    "unpack",
]

log = logging.getLogger(__name__)

PARAM_NAMES = ("a0", "rho", "delta", "kappa", "theta", "sigma", "mu", "l", "y0")
PENALTY = 1e6
_ESCALATIONS = 2
QUOTE_KINDS = ("upfront_pct", "running_bp", "index_bp")


class QuoteError(ValueError):
    pass


class CalibrationFailed(RuntimeError):
    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class NoRoot(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrancheQuote:
    lo: float
    hi: float
    kind: str
    bid: float
    ask: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)

    @property
    def label(self) -> str:
        if self.kind == "index_bp":
            return "index"
        return f"[{self.lo * 100:g},{self.hi * 100:g}]"


@dataclass(frozen=True)
class QuoteSet:
    """Quotes for one maturity; ``tranches`` excludes the index quote.

    Upfront quotes stay in percent and running quotes in bp, the units the
    market uses; tranche bounds are fractions of pool notional.
    """

    maturity: float
    tranches: tuple
    index_bid: float
    index_ask: float
    n_obligors: int = 100
    recovery: float = 0.4

    def __post_init__(self):
        prev = 0.0
        for q in self.tranches:
            if q.bid > q.ask:
                raise QuoteError(f"bid above ask for tranche {q.label}")
            if q.kind not in ("upfront_pct", "running_bp"):
                raise QuoteError(f"unknown tranche quote kind {q.kind!r}")
            if abs(q.lo - prev) > 1e-12 or not q.hi > q.lo:
                raise QuoteError("tranche bands must be contiguous and increasing from 0")
            prev = q.hi
        if self.index_bid > self.index_ask:
            raise QuoteError("index bid above ask")

    @property
    def instruments(self) -> list:
        return list(self.tranches) + [TrancheQuote(0.0, 1.0, "index_bp", self.index_bid, self.index_ask)]

    @property
    def mids(self) -> np.ndarray:
        return np.array([q.mid for q in self.instruments])


def load_quotes(path, n_obligors: int = 100, recovery: float = 0.4) -> list:
    """Read ``maturity_years,lo,hi,kind,bid,ask`` rows, one QuoteSet per
    maturity in file order.  ``lo``/``hi`` are in percent of notional."""
    path = Path(path)
    if not path.is_file():
        raise QuoteError(f"quote file not found: {path}")
    groups: dict = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"maturity_years", "lo", "hi", "kind", "bid", "ask"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise QuoteError(f"{path}: header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                mat = float(row["maturity_years"])
                kind = row["kind"].strip()
                if kind not in QUOTE_KINDS:
                    raise QuoteError(f"unknown kind {kind!r}")
                q = TrancheQuote(float(row["lo"]) / 100, float(row["hi"]) / 100, kind,
                                 float(row["bid"]), float(row["ask"]))
            except (ValueError, TypeError) as exc:
                raise QuoteError(f"{path}:{lineno}: {exc}") from None
            groups.setdefault(mat, []).append((lineno, q))
    if not groups:
        raise QuoteError(f"{path}: no quotes")
    out = []
    for mat, rows in groups.items():
        idx = [q for _, q in rows if q.kind == "index_bp"]
        if len(idx) != 1:
            raise QuoteError(f"{path}: maturity {mat:g} needs exactly one index_bp row")
        tr = tuple(q for _, q in rows if q.kind != "index_bp")
        out.append(QuoteSet(mat, tr, idx[0].bid, idx[0].ask, n_obligors, recovery))
    return out


@dataclass(frozen=True)
class CalibrationBox:
    lower: tuple = (0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    upper: tuple = (2.0, 2.0, 1.0, 7.0, 7.0, 0.4, 5.0, 1.0, 10.0)

    def __post_init__(self):
        if len(self.lower) != 9 or len(self.upper) != 9:
            raise ValueError("box needs nine bounds per side")
        if any(not lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("box needs lower < upper componentwise")

    def contains(self, x) -> bool:
        return all(lo <= v <= hi for lo, v, hi in zip(self.lower, x, self.upper))

    def interior(self, margin: float = 1e-6) -> list:
        """Closed bounds just inside the open box (kappa must stay positive)."""
        out = []
        for lo, hi in zip(self.lower, self.upper):
            pad = margin * (hi - lo)
            out.append((lo + pad, hi - pad))
        return out


@dataclass(frozen=True)
class CalibrationSettings:
    r: float = 0.05
    payments_per_year: int = 4
    running_bp: float = 0.0  # fixed running spread behind upfront-quoted tranches
    index_convention: str = "tranche"
    precision: Optional[PrecisionPolicy] = None  # None: sized per parameter vector
    method: str = "trf"  # bounded least squares; "slsqp" minimizes the scalar objective
    eps: float = 1.49e-10  # finite-difference step (relative for trf, absolute for slsqp)
    ftol: float = 1e-15
    maxiter: int = 60

    def __post_init__(self):
        if self.method not in ("trf", "slsqp"):
            raise ValueError(f"unknown method {self.method!r}")


def unpack(x, n_obligors: int):
    a0, rho, delta, kappa, theta, sigma, mu, l, y0 = (float(v) for v in x)
    spec = ContagionSpec.hcm(n_obligors, rho, delta, a0=a0)
    return spec, AJDParams(kappa, theta, sigma, l, mu, y0)


def _deck(quotes: QuoteSet, settings: CalibrationSettings) -> TrancheDeck:
    attach = [0.0] + [q.hi for q in quotes.tranches]
    if attach[-1] < 1.0:
        attach.append(1.0)
    m = int(round(quotes.maturity * settings.payments_per_year))
    return TrancheDeck.regular(attach, [0.0] * (len(attach) - 1), quotes.maturity, m, settings.r,
                               RecoveryVector.homogeneous(quotes.n_obligors, quotes.recovery))


def model_quotes(x, quotes: QuoteSet, settings: CalibrationSettings = CalibrationSettings()) -> np.ndarray:
    """Model values in the quoting units of each instrument."""
    spec, p = unpack(x, quotes.n_obligors)
    deck = _deck(quotes, settings)
    pol = settings.precision or suggest_precision(spec)
    for attempt in range(_ESCALATIONS + 1):
        try:
            curve = loss_curve(spec, deck, p, pol)
            break
        except PrecisionLoss:
            # a deep tranche with a tiny expected loss cancels more bits than
            # the size estimate allows for; retry wider before giving up
            if attempt == _ESCALATIONS:
                raise
            pol = pol.doubled()
    out = []
    for i, q in enumerate(quotes.tranches, start=1):
        if q.kind == "upfront_pct":
            out.append(100.0 * upfront_rate(deck, i, curve, settings.running_bp))
        else:
            out.append(tranche_spread(deck, i, curve))
    out.append(index_spread(deck, curve, settings.index_convention))
    return np.array(out)


_PRICING_ERRORS = (RateCollision, PrecisionLoss, DegenerateTranche, OracleDomainError,
                   ZeroDivisionError, ValueError, OverflowError)


def residuals(x, quotes, settings: CalibrationSettings = CalibrationSettings()) -> np.ndarray:
    """Relative errors ``(model - mid) / mid`` of every instrument, set by set.

    A pricing failure fills the vector with equal entries whose squares sum to
    :data:`PENALTY`.
    """
    sets = quotes if isinstance(quotes, (list, tuple)) else [quotes]
    size = sum(len(q.instruments) for q in sets)
    out = []
    for qs in sets:
        try:
            model = model_quotes(x, qs, settings)
        except _PRICING_ERRORS as exc:
            log.warning("pricing failed at x=%s: %s", np.round(np.asarray(x, float), 6).tolist(), exc)
            return np.full(size, math.sqrt(PENALTY / size))
        if not np.all(np.isfinite(model)):
            return np.full(size, math.sqrt(PENALTY / size))
        out.append((model - qs.mids) / qs.mids)
    return np.concatenate(out)


def objective(x, quotes, settings: CalibrationSettings = CalibrationSettings()) -> float:
    """Sum of squared relative errors against mids; a list of QuoteSets
    sums their objectives (joint calibration)."""
    r = residuals(x, quotes, settings)
    return min(PENALTY, float(np.dot(r, r)))


def aape(model, mids) -> float:
    """Mean absolute relative error in percent; zero mids are skipped."""
    model = np.asarray(model, dtype=float)
    mids = np.asarray(mids, dtype=float)
    if model.shape != mids.shape:
        raise ValueError("model and market vectors differ in length")
    keep = mids != 0
    if not keep.all():
        log.warning("aape: skipping %d instrument(s) with a zero mid", int((~keep).sum()))
    if not keep.any():
        return 0.0
    return float(np.mean(np.abs(model[keep] - mids[keep]) / np.abs(mids[keep])) * 100.0)


@dataclass
class CalibrationResult:
    x_hat: np.ndarray
    objective: float
    aape: float
    model_quotes: list
    market_mids: list
    trace: list = field(default_factory=list)
    starts: list = field(default_factory=list)

    def params(self) -> dict:
        return dict(zip(PARAM_NAMES, (float(v) for v in self.x_hat)))


def _starts(box: CalibrationBox, n: int, seed: int, x0=None) -> np.ndarray:
    lo = np.array([b[0] for b in box.interior(0.05)])
    hi = np.array([b[1] for b in box.interior(0.05)])
    pts = []
    if x0 is not None:
        # a supplied start only has to respect the solver bounds
        inner = box.interior()
        pts.append(np.clip(np.asarray(x0, float), [b[0] for b in inner], [b[1] for b in inner]))
    if n > len(pts):
        sob = qmc.Sobol(d=9, scramble=True, seed=seed).random(max(2, 1 << math.ceil(math.log2(n))))
        for u in sob[: n - len(pts)]:
            # log-uniform in the small-rate coordinates: a0 and rho live near 0
            x = lo + u * (hi - lo)
            for j in (0, 1):
                x[j] = lo[j] * (hi[j] / lo[j]) ** u[j] if lo[j] > 0 else x[j]
            pts.append(x)
    return np.array(pts[:n])


def calibrate(quotes, box: CalibrationBox = CalibrationBox(), starts: int = 8, seed: int = 0,
              settings: CalibrationSettings = CalibrationSettings(), x0=None) -> CalibrationResult:
    """Multistart bounded local minimization; returns the best run.

    The default ``trf`` method runs trust-region least squares on the
    relative-error vector; ``slsqp`` minimizes the summed objective instead.
    Both use forward differences with step ``settings.eps``.  ``x0``
    (optional) is used as the first start; the rest are scrambled Sobol
    points in the box interior.
    """
    sets = quotes if isinstance(quotes, (list, tuple)) else [quotes]
    if not sets or any(len(q.instruments) == 0 for q in sets):
        raise CalibrationFailed("no quotes to fit")
    bounds = box.interior()
    lo, hi = np.array([b[0] for b in bounds]), np.array([b[1] for b in bounds])
    best = None
    diagnostics = []
    runs = []
    for k, start in enumerate(_starts(box, starts, seed, x0)):
        trace = []
        t0 = time.perf_counter()

        def r(x):
            v = residuals(x, sets, settings)
            trace.append((k, len(trace), min(PENALTY, float(np.dot(v, v)))))
            return v

        def f(x):
            v = r(x)
            return float(np.dot(v, v))

        try:
            if settings.method == "trf":
                res = least_squares(r, start, bounds=(lo, hi), method="trf", x_scale="jac",
                                    diff_step=settings.eps, ftol=settings.ftol, xtol=settings.ftol,
                                    gtol=settings.ftol, max_nfev=settings.maxiter)
            else:
                res = minimize(f, start, method="SLSQP", bounds=bounds,
                               options={"eps": settings.eps, "ftol": settings.ftol,
                                        "maxiter": settings.maxiter})
        except Exception as exc:  # keep the other starts alive
            diagnostics.append(f"start {k}: {type(exc).__name__}: {exc}")
            continue
        x = np.clip(res.x, lo, hi)
        val = objective(x, sets, settings)
        runs.append({"start": k, "x0": start.tolist(), "x": x.tolist(), "objective": val,
                     "message": str(res.message), "evals": len(trace),
                     "seconds": time.perf_counter() - t0})
        log.info("start %d: objective %.6g after %d evaluations", k, val, len(trace))
        if val >= PENALTY:
            diagnostics.append(f"start {k}: ended in infeasible pricing region ({res.message})")
            continue
        if best is None or val < best[1]:
            best = (x, val, trace)
    if best is None:
        raise CalibrationFailed("every calibration start failed", diagnostics)
    x, val, trace = best
    model = np.concatenate([model_quotes(x, q, settings) for q in sets])
    mids = np.concatenate([q.mids for q in sets])
    return CalibrationResult(x, val, aape(model, mids), model.tolist(), mids.tolist(), trace, runs)


def implied_rho(quotes: QuoteSet, instrument: int, x_fixed, target: Optional[float] = None,
                settings: CalibrationSettings = CalibrationSettings(),
                box: CalibrationBox = CalibrationBox(), xtol: float = 1e-8) -> float:
    """Contagion rate that reprices one instrument exactly, every other
    parameter frozen at ``x_fixed``.

    ``instrument`` indexes :attr:`QuoteSet.instruments` (the index is last);
    ``target`` defaults to the market mid.  The bracket starts around the
    frozen ``rho`` and expands geometrically up to the box edges.
    """
    inst = quotes.instruments
    if not 0 <= instrument < len(inst):
        raise IndexError("instrument out of range")
    goal = inst[instrument].mid if target is None else float(target)
    x = np.asarray(x_fixed, dtype=float).copy()
    rho_lo, rho_hi = box.interior()[1]

    def gap(r):
        x[1] = r
        return float(model_quotes(x, quotes, settings)[instrument]) - goal

    r0 = min(max(float(x_fixed[1]), rho_lo), rho_hi)
    if gap(r0) == 0.0:
        return r0
    a, b = max(rho_lo, r0 / 2), min(rho_hi, r0 * 2)
    ga, gb = gap(a), gap(b)
    while ga * gb > 0:
        if a <= rho_lo and b >= rho_hi:
            raise NoRoot(f"no sign change for instrument {instrument} within the box")
        a, b = max(rho_lo, a / 4), min(rho_hi, b * 4)
        ga, gb = gap(a), gap(b)
    if ga == 0.0:
        return a
    if gb == 0.0:
        return b
    return float(bisect(gap, a, b, xtol=xtol, maxiter=200))
