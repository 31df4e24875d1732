"""Monte Carlo realization of the default chain.

Because every intensity is ``Y_t * load(E, i)``, the chain run on the clock
``z = int_0^t Y`` is a time-homogeneous Markov chain with rates
``load(E, i)``.  The simulator therefore draws the default race once in
transformed time (competing exponentials with rates ``load(E, i)``) and maps
the transformed jump times back to calendar time through the simulated
integral of the factor.

Random streams are keyed by ``(seed, chunk index)`` with a fixed chunk size,
so results do not depend on how many worker threads share the chunks.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .ajd import AJDParams
from .model import ContagionSpec, ObligorSet, aggregate_load, contagion_load
from .pricing import DegenerateTranche, TrancheDeck

__all__ = [
    "CHUNK",
    "FactorPath",
    "DefaultScenario",
    "ChainDraws",
    "MCEstimate",
    "chunk_rng",
    "simulate_y_path",
    "simulate_phi_integrals",
    "simulate_factor",
    "simulate_chain",
    "simulate_defaults",
    "mc_expectation",
    "mc_state_distribution",
    "mc_loss_curve",
    "mc_tranche_spread",
    "martingale_check",
]

CHUNK = 10_000
DEFAULT_DT = 1.0 / 250.0


def chunk_rng(seed: int, chunk: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one chunk of paths of one random stream."""
    key = [int(seed), int(stream), int(chunk)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def _chunks(n_paths: int):
    return [(c, min(CHUNK, n_paths - c * CHUNK)) for c in range((n_paths + CHUNK - 1) // CHUNK)]


def _run_chunks(fn: Callable, n_paths: int, threads: int):
    jobs = _chunks(n_paths)
    if threads <= 1 or len(jobs) == 1:
        return [fn(c, m) for c, m in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda job: fn(*job), jobs))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr


# ---------------------------------------------------------------------------
# macro factor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorPath:
    grid: np.ndarray
    values: np.ndarray
    phi_integral: np.ndarray

    def integral_at(self, t: float) -> float:
        return float(np.interp(t, self.grid, self.phi_integral))

    def time_of(self, z: float) -> float:
        """First time the integral reaches ``z`` (``inf`` past the horizon)."""
        pi = self.phi_integral
        if z > pi[-1]:
            return math.inf
        k = int(np.searchsorted(pi, z, side="left"))
        if k == 0:
            return float(self.grid[0])
        z0, z1 = pi[k - 1], pi[k]
        t0, t1 = self.grid[k - 1], self.grid[k]
        return float(t0 + (t1 - t0) * (z - z0) / (z1 - z0))


def _diffusion_step(p: AJDParams, y: np.ndarray, h: float, normals: np.ndarray) -> np.ndarray:
    """Exact mean reversion over ``h`` plus a Gaussian shock, truncated at 0."""
    decay = math.exp(-p.kappa * h)
    scale = math.sqrt((1.0 - decay * decay) / (2.0 * p.kappa)) if p.kappa > 0 else math.sqrt(h)
    pos = np.maximum(y, 0.0)
    nxt = p.theta + (pos - p.theta) * decay + p.sigma * np.sqrt(pos) * scale * normals
    return np.maximum(nxt, 0.0)


def simulate_y_path(p: AJDParams, T: float, dt: float = DEFAULT_DT,
                    rng: Optional[np.random.Generator] = None) -> FactorPath:
    """One factor path on ``[0, T]``; jump instants are inserted into the grid."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng() if rng is None else rng
    n_jumps = rng.poisson(p.l * T) if p.l > 0 else 0
    jump_t = np.sort(rng.uniform(0.0, T, n_jumps))
    jump_sz = rng.exponential(p.mu, n_jumps) if n_jumps else np.zeros(0)
    base = np.linspace(0.0, T, int(math.ceil(T / dt - 1e-9)) + 1)
    grid = np.union1d(base, jump_t)
    is_jump = np.isin(grid, jump_t)
    sizes = dict(zip(jump_t.tolist(), jump_sz.tolist()))
    vals = np.empty(grid.size)
    integ = np.zeros(grid.size)
    vals[0] = p.y0
    normals = rng.standard_normal(grid.size - 1)
    for k in range(1, grid.size):
        h = grid[k] - grid[k - 1]
        pre = _diffusion_step(p, np.array([vals[k - 1]]), h, normals[k - 1:k])[0]
        integ[k] = integ[k - 1] + 0.5 * h * (vals[k - 1] + pre)
        vals[k] = pre + (sizes[grid[k]] if is_jump[k] else 0.0)
    return FactorPath(grid, vals, integ)


def _phi_chunk(p: AJDParams, times: np.ndarray, m: int, dt: float, rng) -> tuple:
    horizon = float(times[-1])
    grid = np.union1d(np.linspace(0.0, horizon, int(math.ceil(horizon / dt - 1e-9)) + 1), times)
    want = np.searchsorted(grid, times)
    y = np.full(m, p.y0)
    z = np.zeros(m)
    out = np.zeros((m, times.size))
    level = np.full((m, times.size), p.y0)
    col = 0
    while col < times.size and want[col] == 0:
        col += 1
    for k in range(1, grid.size):
        h = grid[k] - grid[k - 1]
        pre = _diffusion_step(p, y, h, rng.standard_normal(m))
        z += 0.5 * h * (y + pre)
        y = pre
        if p.l > 0:
            counts = rng.poisson(p.l * h, m)
            top = counts.max() if m else 0
            for j in range(top):
                hit = np.nonzero(counts > j)[0]
                lag = h * rng.uniform(size=hit.size)  # time from the jump to the step end
                size = rng.exponential(p.mu, hit.size)
                fade = np.exp(-p.kappa * lag)
                y[hit] += size * fade
                z[hit] += size * (1.0 - fade) / p.kappa
        while col < times.size and want[col] == k:
            out[:, col] = z
            level[:, col] = y
            col += 1
    return out, level


def simulate_phi_integrals(p: AJDParams, times: Sequence[float], n_paths: int, seed: int,
                           dt: float = DEFAULT_DT, threads: int = 1, stream: int = 0) -> np.ndarray:
    """``int_0^t Y`` at each of ``times`` for ``n_paths`` independent paths.

    Within each step the mean reversion is exact and jump arrivals keep their
    exact instant (their contribution to the level and the integral decays
    from the arrival time to the step end).
    """
    return simulate_factor(p, times, n_paths, seed, dt, threads, stream)[1]


def simulate_factor(p: AJDParams, times: Sequence[float], n_paths: int, seed: int,
                    dt: float = DEFAULT_DT, threads: int = 1, stream: int = 0) -> tuple:
    """``(Y_t, int_0^t Y)`` at each of ``times``, two ``(n_paths, len(times))`` arrays."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be nondecreasing and nonnegative")

    def run(c, m):
        return _phi_chunk(p, times, m, dt, chunk_rng(seed, c, stream))

    parts = _run_chunks(run, n_paths, threads)
    return np.vstack([lv for _, lv in parts]), np.vstack([z for z, _ in parts])


# ---------------------------------------------------------------------------
# default chain in transformed time
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainDraws:
    """Default orders and transformed jump times for a batch of paths.

    ``order[p, k]`` is the ``k``-th obligor (1-based) to default on path
    ``p`` and ``z[p, k]`` its transformed time; unused slots hold 0 and inf.
    """

    order: np.ndarray
    z: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]

    def counts_at(self, zt: np.ndarray) -> np.ndarray:
        """Number of defaults by transformed time ``zt`` (per path, per column)."""
        zt = np.asarray(zt)
        if zt.ndim == 1:
            return (self.z <= zt[:, None]).sum(axis=1)
        return (self.z[:, None, :] <= zt[:, :, None]).sum(axis=2)


def _chain_chunk(spec: ContagionSpec, m: int, rng, z_max: Optional[np.ndarray]) -> ChainDraws:
    n = spec.n
    beta = np.asarray(spec.beta)
    rho = np.asarray(spec.rho)
    pressure = np.zeros((m, n))  # sum of rho[j, :] over defaulted j
    alive = np.ones((m, n), dtype=bool)
    zcur = np.zeros(m)
    order = np.zeros((m, n), dtype=np.int64)
    ztimes = np.full((m, n), np.inf)
    active = np.ones(m, dtype=bool)
    rows = np.arange(m)
    for k in range(n):
        if k == 0:
            loads = np.broadcast_to(beta, (m, n)) * alive
        else:
            loads = spec.h(k) * pressure * alive
        cum = np.cumsum(loads, axis=1)
        total = cum[:, -1]
        e = rng.standard_exponential(m)
        u = rng.uniform(size=m)
        active &= total > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(active, e / np.where(active, total, 1.0), np.inf)
        znew = zcur + step
        if z_max is not None:
            active &= znew <= z_max
        if not active.any():
            break
        pick = np.minimum((cum <= (u * total)[:, None]).sum(axis=1), n - 1)
        idx = rows[active]
        who = pick[active]
        zcur = np.where(active, znew, zcur)
        order[idx, k] = who + 1
        ztimes[idx, k] = znew[active]
        alive[idx, who] = False
        pressure[idx] += rho[who]
    return ChainDraws(order, ztimes)


def simulate_chain(spec: ContagionSpec, n_paths: int, seed: int,
                   z_max: Optional[np.ndarray] = None, threads: int = 1,
                   stream: int = 1) -> ChainDraws:
    """Draw default orders and transformed times for ``n_paths`` paths.

    ``z_max`` (per path) stops each race once it passes the horizon.
    """
    zm = None if z_max is None else np.asarray(z_max, dtype=float)

    def run(c, m):
        sl = None if zm is None else zm[c * CHUNK:c * CHUNK + m]
        return _chain_chunk(spec, m, chunk_rng(seed, c, stream), sl)

    parts = _run_chunks(run, n_paths, threads)
    return ChainDraws(np.vstack([p.order for p in parts]), np.vstack([p.z for p in parts]))


@dataclass(frozen=True)
class DefaultScenario:
    order: tuple
    times: tuple
    sets: tuple


def simulate_defaults(spec: ContagionSpec, path: FactorPath,
                      rng: Optional[np.random.Generator] = None) -> DefaultScenario:
    """Sequential race on one factor path up to the path's horizon."""
    rng = np.random.default_rng() if rng is None else rng
    n = spec.n
    E = ObligorSet.empty(n)
    z = 0.0
    order, times, sets = [], [], []
    zmax = float(path.phi_integral[-1])
    while not E.is_full():
        total = aggregate_load(spec, E)
        if total <= 0.0:
            break
        z += rng.standard_exponential() / total
        if z > zmax:
            break
        surv = list(E.complement())
        loads = np.array([contagion_load(spec, E, i) for i in surv])
        i = surv[int(np.minimum(np.searchsorted(np.cumsum(loads), rng.uniform() * loads.sum(),
                                                side="right"), len(surv) - 1))]
        t = path.time_of(z)
        if times and t <= times[-1]:
            # a flat stretch of the integral maps two jumps to one instant;
            # keep the times strictly ordered by the smallest representable gap
            t = math.nextafter(times[-1], math.inf)
        E = E.add(i)
        order.append(i)
        times.append(t)
        sets.append(E)
    return DefaultScenario(tuple(order), tuple(times), tuple(sets))


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def mc_expectation(p: AJDParams, g: float, t: float, n_paths: int, seed: int,
                   dt: float = DEFAULT_DT, threads: int = 1) -> MCEstimate:
    """Monte Carlo estimate of ``E[exp(-g int_0^t Y)]``."""
    z = simulate_phi_integrals(p, [t], n_paths, seed, dt, threads)[:, 0]
    x = np.exp(-g * z)
    return MCEstimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(n_paths)))


def mc_state_distribution(spec: ContagionSpec, z_values: Sequence[float], n_paths: int,
                          seed: int, threads: int = 1) -> dict:
    """Empirical law of ``X`` at deterministic transformed times.

    Returns ``{z: {set_bits: (probability, stderr)}}``; needs ``N <= 62``.
    """
    n = spec.n
    if n > 62:
        raise ValueError("state tabulation needs N <= 62")
    zs = np.asarray(z_values, dtype=float)
    draws = simulate_chain(spec, n_paths, seed, z_max=np.full(n_paths, zs.max()), threads=threads)
    bits = _state_bits(draws)
    out = {}
    for zv in zs:
        cnt = (draws.z <= zv).sum(axis=1)
        state = bits[np.arange(n_paths), cnt]
        vals, freq = np.unique(state, return_counts=True)
        probs = freq / n_paths
        out[float(zv)] = {int(v): (float(q), float(math.sqrt(q * (1 - q) / n_paths)))
                          for v, q in zip(vals, probs)}
    return out


def _state_bits(draws: ChainDraws) -> np.ndarray:
    """``bits[p, k]`` is the default set after ``k`` defaults on path ``p``."""
    m, n = draws.order.shape
    step = np.where(draws.order > 0, np.left_shift(np.int64(1), np.maximum(draws.order - 1, 0)), 0)
    bits = np.zeros((m, n + 1), dtype=np.int64)
    bits[:, 1:] = np.cumsum(step, axis=1)
    return bits


def mc_loss_curve(spec: ContagionSpec, deck: TrancheDeck, p: AJDParams, n_paths: int,
                  seed: int, dt: float = DEFAULT_DT, threads: int = 1) -> np.ndarray:
    """Per-path tranche losses, shape ``(n_paths, K, len(pay_times))``."""
    times = np.asarray(deck.pay_times)
    zt = simulate_phi_integrals(p, times, n_paths, seed, dt, threads)
    draws = simulate_chain(spec, n_paths, seed, z_max=zt[:, -1], threads=threads)
    n = spec.n
    lgd = (1.0 - np.asarray(deck.recovery.r)) / n
    path_lgd = np.where(draws.order > 0, lgd[np.maximum(draws.order - 1, 0)], 0.0)
    cum = np.zeros((n_paths, n + 1))
    cum[:, 1:] = np.cumsum(path_lgd, axis=1)
    counts = draws.counts_at(zt)  # (paths, times)
    pool = np.take_along_axis(cum, counts, axis=1)
    lo = np.asarray(deck.attach[:-1])[None, :, None]
    hi = np.asarray(deck.attach[1:])[None, :, None]
    L = pool[:, None, :]
    return np.maximum(L - lo, 0.0) - np.maximum(L - hi, 0.0)


def mc_tranche_spread(spec: ContagionSpec, deck: TrancheDeck, p: AJDParams, n_paths: int,
                      seed: int, dt: float = DEFAULT_DT, threads: int = 1) -> list:
    """Spread (bp) and delta-method standard error for every tranche."""
    if n_paths < 1000:
        raise ValueError("mc_tranche_spread needs at least 1000 paths")
    losses = mc_loss_curve(spec, deck, p, n_paths, seed, dt, threads)
    t = np.asarray(deck.pay_times)
    disc = np.exp(-deck.r * t[1:])
    dtk = np.diff(t)
    out = []
    for i in range(1, deck.n_tranches + 1):
        width = deck.width(i)
        li = losses[:, i - 1, :]
        dl = (disc * np.diff(li, axis=1)).sum(axis=1) - deck.upfront[i - 1] * width
        if deck.premium_timing == "start":
            lost = li[:, :-1]
        elif deck.premium_timing == "end":
            lost = li[:, 1:]
        else:
            lost = 0.5 * (li[:, :-1] + li[:, 1:])
        ann = (disc * (width - lost) * dtk).sum(axis=1)
        a_mean = ann.mean()
        if not a_mean > 0:
            raise DegenerateTranche(f"tranche {i} has a zero premium leg")
        s = dl.mean() / a_mean
        resid = dl - s * ann
        se = resid.std(ddof=1) / math.sqrt(n_paths) / a_mean
        out.append(MCEstimate(float(s * 1e4), float(se * 1e4)))
    return out


def martingale_check(spec: ContagionSpec, p: AJDParams, F: ObligorSet, grid: Sequence[float],
                     n_paths: int, seed: int, dt: float = DEFAULT_DT,
                     threads: int = 1) -> tuple:
    """Worst mean of the compensated indicator over ``grid``.

    For each grid time computes ``1{X_t = F} - 1{X_0 = F} - int_0^t sum_E
    1{X_s = E} lambda_EF(s) ds`` per path; the integral is accumulated in
    transformed time, where the intensities are the constant loads.
    Returns ``(worst |mean|, its stderr, all MCEstimates)``.
    """
    n = spec.n
    if n > 62:
        raise ValueError("martingale_check needs N <= 62")
    grid = np.asarray(grid, dtype=float)
    zt = simulate_phi_integrals(p, grid, n_paths, seed, dt, threads)
    draws = simulate_chain(spec, n_paths, seed, z_max=zt[:, -1], threads=threads)
    bits = _state_bits(draws)  # (paths, n+1)
    fb = F.bits
    # compensator rate while sitting in each state: load into F, or -Lbar_F in F
    rate_of = {fb: -aggregate_load(spec, F)}
    for i in F:
        prev = F.difference(ObligorSet.of(n, [i]))
        rate_of[prev.bits] = contagion_load(spec, prev, i)
    rate = np.zeros(bits.shape)
    for sb, r in rate_of.items():
        rate[bits == sb] = r
    enter = np.zeros((n_paths, n + 1))
    enter[:, 1:] = draws.z
    leave = np.full((n_paths, n + 1), np.inf)
    leave[:, :-1] = draws.z
    results = []
    for c in range(grid.size):
        horizon = zt[:, c][:, None]
        with np.errstate(invalid="ignore"):
            spent = np.clip(np.minimum(leave, horizon) - enter, 0.0, None)
        spent[~np.isfinite(enter)] = 0.0
        comp = (rate * spent).sum(axis=1)
        cnt = (draws.z <= zt[:, c][:, None]).sum(axis=1)
        now = bits[np.arange(n_paths), cnt] == fb
        m = now.astype(float) - (1.0 if fb == 0 else 0.0) - comp
        results.append(MCEstimate(float(m.mean()), float(m.std(ddof=1) / math.sqrt(n_paths))))
    worst = max(results, key=lambda e: abs(e.mean))
    return abs(worst.mean), worst.stderr, results
