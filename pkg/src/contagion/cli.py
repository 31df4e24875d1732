"""Command-line front end: ``contagion {price,sensitivity,calibrate,implied-rho,simulate}``.

Every run is driven by one YAML config.  Only ``--out-dir``, ``--seed`` and
``--threads`` can be set from the command line.  Outputs go to a scratch
directory that is moved into place when the command succeeds, so a failed
run leaves nothing behind.

Exit codes: 0 ok, 2 config or input error, 3 pricing error, 4 calibration
failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .ajd import AJDParams, OracleDomainError
from .calibration import (PARAM_NAMES, CalibrationBox, CalibrationFailed, CalibrationSettings,
                          NoRoot, QuoteError, calibrate, load_quotes, model_quotes, implied_rho)
from .hypoexp import RateCollision
from .model import ContagionSpec, ContractViolation, RecoveryVector
from .precision import PrecisionLoss, PrecisionPolicy
from .pricing import (DegenerateTranche, TrancheDeck, attach_detach_times, index_spread,
                      loss_curve, suggest_precision, tranche_spread)
from .simulator import chunk_rng, mc_tranche_spread, simulate_defaults, simulate_y_path

log = logging.getLogger("contagion")

FORMAT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_PRICING, EXIT_CALIBRATION = 0, 2, 3, 4
SENSITIVITY_FACTORS = ("rho", "delta", "m", "R", "kappa", "sigma")

PRICING_ERRORS = (RateCollision, PrecisionLoss, DegenerateTranche, OracleDomainError,
                  ArithmeticError)


class ConfigError(ValueError):
    """Malformed or out-of-domain configuration; carries the source line."""

    def __init__(self, message: str, source: str = "", line: Optional[int] = None):
        self.line = line
        where = f"{source}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# YAML with line numbers
# ---------------------------------------------------------------------------

class _Doc:
    """Parsed YAML plus the line of every key, for error messages."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.lines: dict = {}
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigError(f"not valid YAML ({getattr(exc, 'problem', exc)})", source, line)
        if node is None:
            raise ConfigError("config is empty", source, 1)
        self.data = self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = k.value
                self.lines[path + (key,)] = k.start_mark.line + 1
                out[key] = self._walk(v, path + (key,))
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self._walk(v, path + (i,)) for i, v in enumerate(node.value)]
        loader = yaml.SafeLoader("")
        try:
            return loader.construct_object(node, deep=True)
        finally:
            loader.dispose()

    def error(self, path, message: str) -> ConfigError:
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        name = ".".join(str(x) for x in path)
        return ConfigError(f"{name}: {message}" if name else message, self.source, self.lines.get(p))


class _Block:
    """Typed accessor over one mapping of the config."""

    def __init__(self, doc: _Doc, path: tuple, data, allowed):
        if not isinstance(data, dict):
            raise doc.error(path, "expected a mapping")
        unknown = set(data) - set(allowed)
        if unknown:
            k = sorted(map(str, unknown))[0]
            raise doc.error(path + (k,), f"unknown key (allowed: {', '.join(allowed)})")
        self.doc, self.path, self.data = doc, path, data

    def has(self, key) -> bool:
        return key in self.data and self.data[key] is not None

    def number(self, key, default=None, lo=-math.inf, hi=math.inf, lo_open=False, integer=False):
        if not self.has(key):
            if default is None:
                raise self.doc.error(self.path + (key,), "required field missing")
            return default
        v = self.data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.doc.error(self.path + (key,), f"expected a number, got {v!r}")
        if integer and int(v) != v:
            raise self.doc.error(self.path + (key,), f"expected an integer, got {v!r}")
        if not math.isfinite(v) or v < lo or v > hi or (lo_open and v == lo):
            rng = f"{'(' if lo_open else '['}{lo}, {hi}]"
            raise self.doc.error(self.path + (key,), f"{v!r} outside {rng}")
        return int(v) if integer else float(v)

    def numbers(self, key, default=None, lo=-math.inf, hi=math.inf):
        if not self.has(key):
            if default is None:
                raise self.doc.error(self.path + (key,), "required field missing")
            return list(default)
        v = self.data[key]
        if not isinstance(v, list) or not v:
            raise self.doc.error(self.path + (key,), "expected a nonempty list of numbers")
        out = []
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not lo <= x <= hi:
                raise self.doc.error(self.path + (key, i), f"expected a number in [{lo}, {hi}], got {x!r}")
            out.append(float(x))
        return out

    def choice(self, key, options, default=None):
        v = self.data.get(key, default)
        if v is None:
            raise self.doc.error(self.path + (key,), "required field missing")
        if v not in options:
            raise self.doc.error(self.path + (key,), f"{v!r} not one of {', '.join(map(str, options))}")
        return v

    def block(self, key, allowed, required=True):
        if not self.has(key):
            if required:
                raise self.doc.error(self.path + (key,), "required block missing")
            return None
        return _Block(self.doc, self.path + (key,), self.data[key], allowed)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    kind: str
    n: int
    delta: float
    a0: Optional[float] = None
    beta: Optional[tuple] = None
    rho: Optional[float] = None
    p: Optional[float] = None
    q: Optional[float] = None
    rho_matrix: Optional[tuple] = None

    def spec(self, **changes) -> ContagionSpec:
        kw = {k: getattr(self, k) for k in ("rho", "delta", "a0")}
        kw.update(changes)
        beta = None if self.beta is None else list(self.beta)
        a0 = None if beta is not None and "a0" not in changes else kw["a0"]
        if self.kind == "hcm":
            return ContagionSpec.hcm(self.n, kw["rho"], kw["delta"], a0=a0, beta=None if a0 is not None else beta)
        if self.kind == "ncm":
            return ContagionSpec.ncm(self.n, self.p, self.q, kw["delta"], a0=a0,
                                     beta=None if a0 is not None else beta)
        if beta is None:
            beta = [kw["a0"] / self.n] * self.n
        mat = np.array(self.rho_matrix, float)
        if "rho" in changes:
            mat = np.where(mat != 0, changes["rho"], 0.0)
        return ContagionSpec.general(beta, mat, kw["delta"])


@dataclass(frozen=True)
class DeckConfig:
    attach_pct: tuple
    upfront_bp: tuple
    maturity: float
    payments_per_year: float
    r: float
    recovery: float
    premium_timing: str = "start"

    def deck(self, n: int, payments: Optional[int] = None, recovery: Optional[float] = None) -> TrancheDeck:
        m = payments if payments is not None else int(round(self.maturity * self.payments_per_year))
        rec = self.recovery if recovery is None else recovery
        return TrancheDeck.regular([a / 100.0 for a in self.attach_pct],
                                   [u / 1e4 for u in self.upfront_bp], self.maturity, m, self.r,
                                   RecoveryVector.homogeneous(n, rec), self.premium_timing)


@dataclass(frozen=True)
class MCConfig:
    paths: int = 100_000
    dt: float = 1.0 / 250.0
    seed: int = 0
    scenarios: int = 20


@dataclass(frozen=True)
class CalibrationConfig:
    box: CalibrationBox = CalibrationBox()
    starts: int = 8
    quotes: Optional[Path] = None
    maturities: Optional[tuple] = None
    running_bp: float = 0.0
    index_convention: str = "tranche"
    x0: Optional[tuple] = None
    x_fixed: Optional[tuple] = None
    seed: int = 0
    maxiter: int = CalibrationSettings.maxiter


@dataclass(frozen=True)
class RunConfig:
    source: Path
    model: ModelConfig
    factor: AJDParams
    deck: DeckConfig
    precision: Optional[PrecisionPolicy]  # None: sized from the ladder
    mc: MCConfig = MCConfig()
    calibration: CalibrationConfig = CalibrationConfig()

    def spec(self, **changes) -> ContagionSpec:
        return self.model.spec(**changes)

    def policy(self, spec: ContagionSpec) -> PrecisionPolicy:
        if self.precision is not None:
            return self.precision
        if spec.kind in ("hcm", "ncm"):
            return suggest_precision(spec)
        return PrecisionPolicy()


_TOP = ("model", "factor", "deck", "precision", "mc", "calibration")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", str(path))
    doc = _Doc(text, str(path))
    top = _Block(doc, (), doc.data, _TOP)

    m = top.block("model", ("kind", "n", "a0", "beta", "rho", "p", "q", "delta", "rho_matrix"))
    kind = m.choice("kind", ("hcm", "ncm", "general"))
    n = m.number("n", lo=2, hi=125 if kind != "general" else 25, integer=True)
    beta = tuple(m.numbers("beta", lo=0.0)) if m.has("beta") else None
    if beta is not None and len(beta) != n:
        raise doc.error(("model", "beta"), f"has {len(beta)} entries but n = {n}")
    a0 = m.number("a0", lo=0.0) if m.has("a0") else None
    if (a0 is None) == (beta is None):
        raise doc.error(("model",), "give exactly one of a0 or beta")
    delta = m.number("delta", default=0.0, lo=-50.0, hi=50.0)
    rho = p = q = None
    rho_matrix = None
    if kind == "hcm":
        rho = m.number("rho", lo=0.0)
    elif kind == "ncm":
        p, q = m.number("p", lo=0.0), m.number("q", lo=0.0)
    else:
        if not m.has("rho_matrix"):
            raise doc.error(("model", "rho_matrix"), "required for kind general")
        rows = m.data["rho_matrix"]
        if not isinstance(rows, list) or len(rows) != n:
            raise doc.error(("model", "rho_matrix"), f"expected {n} rows")
        mat = []
        for i, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != n or any(
                    isinstance(x, bool) or not isinstance(x, (int, float)) or x < 0 for x in row):
                raise doc.error(("model", "rho_matrix", i), f"expected {n} nonnegative numbers")
            mat.append(tuple(float(x) for x in row))
        rho_matrix = tuple(mat)
    model = ModelConfig(kind, n, delta, a0, beta, rho, p, q, rho_matrix)

    f = top.block("factor", ("kappa", "theta", "sigma", "l", "mu", "y0"))
    factor = AJDParams(
        kappa=f.number("kappa", lo=0.0, lo_open=True), theta=f.number("theta", lo=0.0),
        sigma=f.number("sigma", lo=0.0), l=f.number("l", default=0.0, lo=0.0),
        mu=f.number("mu", default=0.0, lo=0.0), y0=f.number("y0", default=1.0, lo=0.0))

    d = top.block("deck", ("attach_pct", "upfront_bp", "maturity", "payments_per_year", "r",
                           "recovery", "premium_timing"))
    attach = d.numbers("attach_pct", lo=0.0, hi=100.0)
    if len(attach) < 2 or attach[0] != 0.0 or any(b <= a for a, b in zip(attach, attach[1:])):
        raise doc.error(("deck", "attach_pct"), "must start at 0 and increase strictly")
    upfront = d.numbers("upfront_bp", default=[0.0] * (len(attach) - 1), lo=-1e4, hi=1e4)
    if len(upfront) != len(attach) - 1:
        raise doc.error(("deck", "upfront_bp"), f"needs {len(attach) - 1} entries, one per tranche")
    maturity = d.number("maturity", lo=0.0, lo_open=True, hi=100.0)
    ppy = d.number("payments_per_year", default=4.0, lo=0.0, lo_open=True, hi=365.0)
    if abs(maturity * ppy - round(maturity * ppy)) > 1e-9:
        raise doc.error(("deck", "payments_per_year"), "maturity must span a whole number of periods")
    deck = DeckConfig(tuple(attach), tuple(upfront), maturity, ppy,
                      d.number("r", default=0.05, lo=-0.5, hi=1.0),
                      d.number("recovery", default=0.4, lo=0.0, hi=1.0),
                      d.choice("premium_timing", ("start", "mid", "end"), "start"))

    precision = None
    pr = top.block("precision", ("mantissa_bits", "collision_rel_tol"), required=False)
    if pr is not None:
        if pr.data.get("mantissa_bits", "auto") == "auto":
            precision = None if "collision_rel_tol" not in pr.data else PrecisionPolicy(
                collision_rel_tol=pr.number("collision_rel_tol", lo=0.0))
        else:
            precision = PrecisionPolicy(pr.number("mantissa_bits", lo=53, hi=1 << 20, integer=True),
                                        pr.number("collision_rel_tol", default=1e-12, lo=0.0))

    mc = MCConfig()
    mb = top.block("mc", ("paths", "dt", "seed", "scenarios"), required=False)
    if mb is not None:
        mc = MCConfig(mb.number("paths", default=mc.paths, lo=1000, integer=True),
                      mb.number("dt", default=mc.dt, lo=0.0, lo_open=True, hi=1.0),
                      mb.number("seed", default=mc.seed, lo=0, integer=True),
                      mb.number("scenarios", default=mc.scenarios, lo=0, integer=True))

    cal = CalibrationConfig()
    cb = top.block("calibration", ("box", "starts", "quotes", "maturities", "running_bp",
                                   "index_convention", "x0", "x_fixed", "seed", "maxiter"),
                   required=False)
    if cb is not None:
        box = cal.box
        if cb.has("box"):
            bb = cb.block("box", PARAM_NAMES)
            lower, upper = list(box.lower), list(box.upper)
            for j, name in enumerate(PARAM_NAMES):
                if bb.has(name):
                    pair = bb.numbers(name)
                    if len(pair) != 2 or not pair[0] < pair[1]:
                        raise doc.error(("calibration", "box", name),
                                        "expected [lower, upper] with lower < upper")
                    lower[j], upper[j] = pair
            box = CalibrationBox(tuple(lower), tuple(upper))
        quotes = None
        if cb.has("quotes"):
            quotes = (path.parent / str(cb.data["quotes"])).resolve()
            if not quotes.is_file():
                raise doc.error(("calibration", "quotes"), f"file {quotes} does not exist")
        vecs = {}
        for key in ("x0", "x_fixed"):
            if cb.has(key):
                v = cb.numbers(key)
                if len(v) != len(PARAM_NAMES):
                    raise doc.error(("calibration", key),
                                    f"needs {len(PARAM_NAMES)} entries ({', '.join(PARAM_NAMES)})")
                vecs[key] = tuple(v)
        cal = CalibrationConfig(
            box, cb.number("starts", default=cal.starts, lo=1, integer=True), quotes,
            tuple(cb.numbers("maturities", lo=0.0)) if cb.has("maturities") else None,
            cb.number("running_bp", default=0.0, lo=0.0),
            cb.choice("index_convention", ("tranche", "market"), "tranche"),
            vecs.get("x0"), vecs.get("x_fixed"),
            cb.number("seed", default=0, lo=0, integer=True),
            cb.number("maxiter", default=cal.maxiter, lo=1, integer=True))

    return RunConfig(path, model, factor, deck, precision, mc, cal)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

class _Output:
    """Collects files in a scratch directory; ``commit`` moves them into
    ``out_dir``, so an error exit writes nothing."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.tmp = Path(tempfile.mkdtemp(prefix=".contagion-", dir=self._scratch_parent()))
        self.names: list = []

    def _scratch_parent(self) -> Path:
        parent = self.out_dir.resolve().parent
        return parent if parent.is_dir() else Path(tempfile.gettempdir())

    def csv(self, name: str, header, rows):
        with open(self.tmp / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        self.names.append(name)

    def json(self, name: str, payload: dict):
        payload = {"format_version": FORMAT_VERSION, **payload}
        with open(self.tmp / name, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=False, default=_jsonable)
            fh.write("\n")
        self.names.append(name)

    def commit(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name in self.names:
            os.replace(self.tmp / name, self.out_dir / name)
        self.discard()

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def pct(x: float) -> str:
    return f"{x:g}"


def bp(x: float) -> str:
    return f"{x:.2f}"


def prob(x: float) -> str:
    return f"{x:.11e}"


def _finite(x: float):
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _price(cfg: RunConfig, spec: ContagionSpec, deck: TrancheDeck):
    curve = loss_curve(spec, deck, cfg.factor, cfg.policy(spec))
    return curve, [tranche_spread(deck, i, curve) for i in range(1, deck.n_tranches + 1)]


def cmd_price(cfg: RunConfig, out: _Output, args) -> int:
    spec = cfg.spec()
    deck = cfg.deck.deck(spec.n)
    t0 = time.perf_counter()
    curve, s = _price(cfg, spec, deck)
    idx = index_spread(deck, curve, "tranche")
    elapsed = time.perf_counter() - t0
    times = None
    if spec.kind in ("hcm", "ncm"):
        times = attach_detach_times(spec, deck, cfg.factor, cfg.policy(spec))
    rows = []
    for i, (lo, hi) in enumerate(zip(cfg.deck.attach_pct, cfg.deck.attach_pct[1:])):
        rows.append([pct(lo), pct(hi), bp(cfg.deck.upfront_bp[i]), bp(s[i])])
    out.csv("spreads.csv", ["tranche_lo", "tranche_hi", "upfront_bp", "spread_bp"], rows)
    lc = []
    for j, t in enumerate(curve.times):
        for i, (lo, hi) in enumerate(zip(cfg.deck.attach_pct, cfg.deck.attach_pct[1:])):
            lc.append([f"{t:.6g}", pct(lo), pct(hi), prob(curve.values[i, j])])
    out.csv("loss_curve.csv", ["t", "tranche_lo", "tranche_hi", "expected_loss"], lc)
    if times is not None:
        out.csv("attach_detach.csv", ["tranche_lo", "tranche_hi", "attach_time", "detach_time"],
                [[pct(lo), pct(hi), f"{a:.6g}", f"{b:.6g}"] for (lo, hi), (a, b)
                 in zip(zip(cfg.deck.attach_pct, cfg.deck.attach_pct[1:]), times)])
    out.json("summary.json", {
        "command": "price",
        "spreads_bp": s,
        "index_spread_bp": idx,
        "mantissa_bits": cfg.policy(spec).mantissa_bits,
        "seconds": elapsed,
        "attach_detach_years": None if times is None else [[_finite(a), _finite(b)] for a, b in times],
    })
    return EXIT_OK


def _parse_grid(text: str) -> list:
    """``a:b:n`` (n evenly spaced points) or a comma list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            return list(np.linspace(float(a), float(b), n))
        vals = [float(v) for v in text.split(",") if v.strip()]
        if not vals:
            raise ValueError
        return vals
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; use start:stop:count or a comma list", "--grid")


def _sensitivity_point(cfg: RunConfig, factor: str, v: float):
    spec, deck, ajd = cfg.spec(), None, cfg.factor
    if factor in ("rho", "delta"):
        spec = cfg.spec(**{factor: v})
    elif factor in ("kappa", "sigma"):
        ajd = ajd.replace(**{factor: v})
    n = spec.n
    if factor == "m":
        if v < 1 or v != int(v):
            raise ConfigError(f"m must be a positive integer, got {v}", "--grid")
        deck = cfg.deck.deck(n, payments=int(v))
    elif factor == "R":
        deck = cfg.deck.deck(n, recovery=v)
    else:
        deck = cfg.deck.deck(n)
    curve = loss_curve(spec, deck, ajd, cfg.policy(spec))
    return [tranche_spread(deck, i, curve) for i in range(1, deck.n_tranches + 1)]


def cmd_sensitivity(cfg: RunConfig, out: _Output, args) -> int:
    if args.factor not in SENSITIVITY_FACTORS:
        raise ConfigError(f"unknown factor {args.factor!r} (choose from {', '.join(SENSITIVITY_FACTORS)})",
                          "--factor")
    grid = _parse_grid(args.grid)
    rows = []
    for v in grid:
        s = _sensitivity_point(cfg, args.factor, v)
        for i, (lo, hi) in enumerate(zip(cfg.deck.attach_pct, cfg.deck.attach_pct[1:])):
            rows.append([args.factor, f"{v:.10g}", pct(lo), pct(hi), bp(s[i])])
    out.csv("sensitivity.csv", ["factor", "factor_value", "tranche_lo", "tranche_hi", "spread_bp"], rows)
    return EXIT_OK


def _quote_sets(cfg: RunConfig, quotes_path):
    path = Path(quotes_path) if quotes_path else cfg.calibration.quotes
    if path is None:
        raise ConfigError("no quote file (pass one or set calibration.quotes)", str(cfg.source))
    sets = load_quotes(path, cfg.model.n, cfg.deck.recovery)
    if cfg.calibration.maturities is not None:
        want = set(cfg.calibration.maturities)
        sets = [q for q in sets if q.maturity in want]
        if not sets:
            raise ConfigError(f"no quotes for maturities {sorted(want)}", str(path))
    return sets


def _settings(cfg: RunConfig) -> CalibrationSettings:
    return CalibrationSettings(r=cfg.deck.r, payments_per_year=cfg.deck.payments_per_year,
                               running_bp=cfg.calibration.running_bp,
                               index_convention=cfg.calibration.index_convention,
                               precision=cfg.precision, maxiter=cfg.calibration.maxiter)


def _instrument_rows(sets, model, mids):
    rows, k = [], 0
    for qs in sets:
        for inst in qs.instruments:
            unit = "pct" if inst.kind == "upfront_pct" else "bp"
            rows.append([qs.maturity, inst.label, inst.kind, f"{mids[k]:.2f}", f"{model[k]:.2f}",
                         f"{(model[k] - mids[k]) / mids[k] * 100:.2f}" if mids[k] else "", unit])
            k += 1
    return rows


def cmd_calibrate(cfg: RunConfig, out: _Output, args) -> int:
    if cfg.model.kind != "hcm":
        raise ConfigError("calibration fits the hcm model; set model.kind: hcm", str(cfg.source))
    sets = _quote_sets(cfg, args.quotes)
    seed = args.seed if args.seed is not None else cfg.calibration.seed
    t0 = time.perf_counter()
    res = calibrate(sets if len(sets) > 1 else sets[0], cfg.calibration.box, cfg.calibration.starts,
                    seed, _settings(cfg), cfg.calibration.x0)
    elapsed = time.perf_counter() - t0
    out.csv("fit.csv", ["maturity_years", "instrument", "kind", "market_mid", "model", "rel_err_pct", "unit"],
            _instrument_rows(sets, res.model_quotes, res.market_mids))
    out.json("calibration.json", {
        "command": "calibrate",
        "x_hat": res.params(),
        "objective": res.objective,
        "aape": res.aape / 100.0,
        "aape_pct": res.aape,
        "maturities": [q.maturity for q in sets],
        "model_quotes": res.model_quotes,
        "market_mids": res.market_mids,
        "starts": res.starts,
        "seconds": elapsed,
    })
    return EXIT_OK


def cmd_implied_rho(cfg: RunConfig, out: _Output, args) -> int:
    sets = _quote_sets(cfg, args.quotes)
    if cfg.calibration.x_fixed is not None:
        x = list(cfg.calibration.x_fixed)
    elif cfg.model.kind == "hcm" and cfg.model.a0 is not None:
        p = cfg.factor
        x = [cfg.model.a0, cfg.model.rho, cfg.model.delta, p.kappa, p.theta, p.sigma, p.mu, p.l, p.y0]
    else:
        raise ConfigError("set calibration.x_fixed or give an hcm model with a0", str(cfg.source))
    settings = _settings(cfg)
    rows, flagged = [], 0
    for qs in sets:
        for k, inst in enumerate(qs.instruments):
            try:
                r = implied_rho(qs, k, x, settings=settings, box=cfg.calibration.box)
                rows.append([qs.maturity, inst.label, f"{r:.10g}", "OK"])
            except NoRoot:
                flagged += 1
                rows.append([qs.maturity, inst.label, "", "NO_ROOT"])
    out.csv("implied_rho.csv", ["maturity_years", "instrument", "implied_rho", "status"], rows)
    out.json("implied_rho.json", {"command": "implied-rho", "x_fixed": dict(zip(PARAM_NAMES, x)),
                                  "no_root": flagged, "rows": rows})
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: _Output, args) -> int:
    spec = cfg.spec()
    deck = cfg.deck.deck(spec.n)
    seed = args.seed if args.seed is not None else cfg.mc.seed
    rows = []
    for s in range(cfg.mc.scenarios):
        rng = chunk_rng(seed, s, stream=2)
        path = simulate_y_path(cfg.factor, deck.maturity, cfg.mc.dt, rng)
        sc = simulate_defaults(spec, path, rng)
        rows += [[s, k + 1, f"{t:.10g}", i] for k, (i, t) in enumerate(zip(sc.order, sc.times))]
    out.csv("scenarios.csv", ["path_id", "k", "tau_k", "obligor"], rows)
    mc = mc_tranche_spread(spec, deck, cfg.factor, cfg.mc.paths, seed, cfg.mc.dt, args.threads)
    analytic = None
    if spec.kind in ("hcm", "ncm") or spec.n <= 12:
        _, analytic = _price(cfg, spec, deck)
    tranches = []
    for i, e in enumerate(mc):
        row = {"tranche_lo": cfg.deck.attach_pct[i], "tranche_hi": cfg.deck.attach_pct[i + 1],
               "mc_spread_bp": round(e.mean, 2), "mc_stderr_bp": round(e.stderr, 4)}
        if analytic is not None:
            row["analytic_spread_bp"] = round(analytic[i], 2)
            row["within_3se"] = bool(e.within(analytic[i]))
        tranches.append(row)
    out.json("mc_summary.json", {"command": "simulate", "paths": cfg.mc.paths, "seed": seed,
                                 "dt": cfg.mc.dt, "tranches": tranches})
    return EXIT_OK


COMMANDS = {
    "price": cmd_price,
    "sensitivity": cmd_sensitivity,
    "calibrate": cmd_calibrate,
    "implied-rho": cmd_implied_rho,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contagion", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML run configuration")
        p.add_argument("--out-dir", default="out", help="directory for the output files")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo")

    common(sub.add_parser("price", help="tranche spreads and expected-loss curves"))
    p = sub.add_parser("sensitivity", help="sweep one factor, others at config values")
    common(p)
    p.add_argument("--factor", required=True, help="one of " + ", ".join(SENSITIVITY_FACTORS))
    p.add_argument("--grid", required=True, help="start:stop:count or comma list")
    for name, text in (("calibrate", "fit the hcm vector to tranche quotes"),
                       ("implied-rho", "contagion rate implied by each quote")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("quotes", nargs="?", default=None, help="quote CSV (else calibration.quotes)")
    common(sub.add_parser("simulate", help="Monte Carlo scenarios and spread cross-check"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    out = None
    try:
        cfg = load_config(args.config)
        out = _Output(Path(args.out_dir))
        code = COMMANDS[args.command](cfg, out, args)
        out.commit()
        return code
    except (ConfigError, QuoteError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationFailed as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        for line in exc.diagnostics:
            print(f"  {line}", file=sys.stderr)
        return EXIT_CALIBRATION
    except PRICING_ERRORS as exc:
        print(f"pricing error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PRICING
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if out is not None:
            out.discard()


if __name__ == "__main__":
    sys.exit(main())
