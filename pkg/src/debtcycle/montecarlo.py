"""Seeded ensembles of the raw stochastic process.

Every path owns a Philox counter-based stream keyed by the seed, with the
path index in the third counter word.  Block t of that stream (four 64-bit
words) drives quarter t+1: word 0 the investment sign, word 1 the house
return, word 2 the installment and word 3 is spare.  Any path can therefore
be regenerated in isolation, and results do not depend on how paths are
spread over workers.

Paths are processed in fixed-size chunks.  Each chunk reduces to
(count, mean, M2) per quarter and chunks are merged in index order, so the
summary statistics are identical for any thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import InvalidParameters, NoHittingData
from .model import InitialState, ModelParams, step_arrays

CHUNK_PATHS = 4096
WORDS_PER_STEP = 4
DEFAULT_MEMORY_BUDGET = 512 * 2**20  # bytes for retained full paths
_U53 = 2.0**-53

NO_HIT, HIT_EQUITY, HIT_MORTGAGE = 0, 1, 2


@dataclass(frozen=True)
class EnsembleConfig:
    n_paths: int
    horizon: int
    seed: int = 0
    stop_at_boundary: bool = False
    keep_paths: bool = False
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    threads: Optional[int] = None  # None reads DEBTCYCLE_THREADS

    def __post_init__(self) -> None:
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise InvalidParameters(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise InvalidParameters(f"horizon must be a non-negative integer, got {self.horizon!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParameters(f"seed must fit in 64 bits, got {self.seed!r}")
        if self.keep_paths and 2 * 8 * self.n_paths * (self.horizon + 1) > self.memory_budget:
            raise InvalidParameters(
                f"retaining {self.n_paths} x {self.horizon + 1} paths exceeds the memory budget"
            )


@dataclass(frozen=True)
class EnsembleStats:
    t: np.ndarray
    mean_e: np.ndarray
    mean_m: np.ndarray
    var_e: np.ndarray
    var_m: np.ndarray
    surviving: np.ndarray
    n_paths: int
    stopped: bool
    hit_time: Optional[np.ndarray] = None  # nan where censored
    hit_boundary: Optional[np.ndarray] = None  # NO_HIT / HIT_EQUITY / HIT_MORTGAGE
    paths_e: Optional[np.ndarray] = field(default=None, repr=False)
    paths_m: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def std_e(self) -> np.ndarray:
        return np.sqrt(self.var_e)

    @property
    def std_m(self) -> np.ndarray:
        return np.sqrt(self.var_m)

    @property
    def sem_e(self) -> np.ndarray:
        return self.std_e / math.sqrt(self.n_paths)

    @property
    def sem_m(self) -> np.ndarray:
        return self.std_m / math.sqrt(self.n_paths)


def worker_count(requested: Optional[int] = None) -> int:
    if requested is None:
        raw = os.environ.get("DEBTCYCLE_THREADS", "0")
        try:
            requested = int(raw)
        except ValueError:
            raise InvalidParameters(f"DEBTCYCLE_THREADS must be an integer, got {raw!r}") from None
    if requested < 0:
        raise InvalidParameters("thread count must be >= 0")
    return requested or (os.cpu_count() or 1)


def path_words(seed: int, path: int, horizon: int) -> np.ndarray:
    """Raw 64-bit words for one path, shape (horizon, 4)."""
    gen = np.random.Philox(key=int(seed), counter=[0, 0, int(path), 0])
    return gen.random_raw(WORDS_PER_STEP * horizon).reshape(horizon, WORDS_PER_STEP)


def _uniform(words: np.ndarray) -> np.ndarray:
    """Open-interval uniforms on (0, 1) from the top 53 bits."""
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def shocks_from_words(words: np.ndarray, params: ModelParams):
    """Map raw words (..., 4) to (sigma, r, pi) arrays of shape (...)."""
    sigma = np.where(_uniform(words[..., 0]) < params.p, 1.0, -1.0)
    r = params.s + params.phi * ndtri(_uniform(words[..., 1]))
    pi = np.where(_uniform(words[..., 2]) < params.q, 0.0, params.pi_star)
    return sigma, r, pi


def path_shocks(params: ModelParams, seed: int, first_path: int, n_paths: int, horizon: int):
    """Shock arrays of shape (n_paths, horizon) for paths first_path, first_path+1, ..."""
    if horizon == 0:
        empty = np.empty((n_paths, 0))
        return empty, empty, empty
    words = np.stack([path_words(seed, first_path + i, horizon) for i in range(n_paths)])
    return shocks_from_words(words, params)


def simulate_paths(params: ModelParams, init: InitialState, n_paths: int, horizon: int,
                   seed: int = 0, first_path: int = 0):
    """Full non-stopped trajectories: (e, m, r), e and m of shape (n, horizon + 1)."""
    sigma, r, pi = path_shocks(params, seed, first_path, n_paths, horizon)
    e = np.empty((n_paths, horizon + 1))
    m = np.empty((n_paths, horizon + 1))
    e[:, 0], m[:, 0] = init.e0, init.m0
    for t in range(horizon):
        e[:, t + 1], m[:, t + 1] = step_arrays(e[:, t], m[:, t], sigma[:, t], r[:, t], pi[:, t], params.leverage)
    return e, m, r


def _crossing(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Fraction of the quarter at which a linear interpolant reaches zero."""
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = prev / (prev - cur)
    return np.clip(np.where(np.isfinite(frac), frac, 1.0), 0.0, 1.0)


@dataclass
class _ChunkResult:
    count: int
    mean: np.ndarray  # (2, T+1)
    m2: np.ndarray  # (2, T+1)
    surviving: np.ndarray
    hit_time: Optional[np.ndarray]
    hit_boundary: Optional[np.ndarray]
    paths: Optional[tuple[np.ndarray, np.ndarray]]


def _run_chunk(params: ModelParams, init: InitialState, config: EnsembleConfig,
               first: int, size: int) -> _ChunkResult:
    horizon = config.horizon
    sigma, r, pi = path_shocks(params, config.seed, first, size, horizon)
    e = np.empty((size, horizon + 1))
    m = np.empty((size, horizon + 1))
    e[:, 0], m[:, 0] = init.e0, init.m0
    alive = np.ones(size, dtype=bool)
    surviving = np.empty(horizon + 1, dtype=np.int64)
    hit_time = np.full(size, np.nan) if config.stop_at_boundary else None
    hit_boundary = np.zeros(size, dtype=np.int8) if config.stop_at_boundary else None
    if config.stop_at_boundary:
        # a path that starts on a boundary is stopped at t = 0
        start_e, start_m = init.e0 <= 0.0, init.m0 <= 0.0
        if start_e or start_m:
            alive[:] = False
            hit_time[:] = 0.0
            hit_boundary[:] = HIT_EQUITY if start_e else HIT_MORTGAGE
    surviving[0] = alive.sum()
    for t in range(horizon):
        ne, nm = step_arrays(e[:, t], m[:, t], sigma[:, t], r[:, t], pi[:, t], params.leverage)
        if config.stop_at_boundary:
            ne = np.where(alive, ne, e[:, t])
            nm = np.where(alive, nm, m[:, t])
            hit_e = alive & (ne <= 0.0)
            hit_m = alive & (nm <= 0.0)
            hits = hit_e | hit_m
            if hits.any():
                fe = np.where(hit_e, _crossing(e[:, t], ne), np.inf)
                fm = np.where(hit_m, _crossing(m[:, t], nm), np.inf)
                # equity wins a same-instant tie, as in the mean classification
                equity_first = fe <= fm
                hit_time[hits] = t + np.minimum(fe, fm)[hits]
                hit_boundary[hits] = np.where(equity_first[hits], HIT_EQUITY, HIT_MORTGAGE)
                alive &= ~hits
        e[:, t + 1], m[:, t + 1] = ne, nm
        surviving[t + 1] = alive.sum()
    stacked = np.stack([e, m])  # (2, size, T+1)
    mean = stacked.mean(axis=1)
    m2 = ((stacked - mean[:, None, :]) ** 2).sum(axis=1)
    paths = (e, m) if config.keep_paths else None
    return _ChunkResult(size, mean, m2, surviving, hit_time, hit_boundary, paths)


def _merge(results: list[_ChunkResult]):
    """Chan's pairwise update, applied in chunk order."""
    count = 0
    mean = m2 = None
    for res in results:
        if count == 0:
            count, mean, m2 = res.count, res.mean.copy(), res.m2.copy()
            continue
        total = count + res.count
        delta = res.mean - mean
        mean = mean + delta * (res.count / total)
        m2 = m2 + res.m2 + delta**2 * (count * res.count / total)
        count = total
    return count, mean, m2


def run_ensemble(params: ModelParams, init: InitialState, config: EnsembleConfig) -> EnsembleStats:
    starts = list(range(0, config.n_paths, CHUNK_PATHS))
    sizes = [min(CHUNK_PATHS, config.n_paths - s) for s in starts]
    workers = min(worker_count(config.threads), len(starts))
    if workers <= 1:
        results = [_run_chunk(params, init, config, s, n) for s, n in zip(starts, sizes)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _run_chunk(params, init, config, *a), zip(starts, sizes)))

    count, mean, m2 = _merge(results)
    var = m2 / (count - 1) if count > 1 else np.zeros_like(m2)
    surviving = np.sum([r.surviving for r in results], axis=0)
    hit_time = hit_boundary = None
    if config.stop_at_boundary:
        hit_time = np.concatenate([r.hit_time for r in results])
        hit_boundary = np.concatenate([r.hit_boundary for r in results])
    paths_e = paths_m = None
    if config.keep_paths:
        paths_e = np.concatenate([r.paths[0] for r in results])
        paths_m = np.concatenate([r.paths[1] for r in results])
    return EnsembleStats(
        t=np.arange(config.horizon + 1, dtype=float),
        mean_e=mean[0], mean_m=mean[1], var_e=var[0], var_m=var[1],
        surviving=surviving, n_paths=count, stopped=config.stop_at_boundary,
        hit_time=hit_time, hit_boundary=hit_boundary, paths_e=paths_e, paths_m=paths_m,
    )


@dataclass(frozen=True)
class HittingSummary:
    counts: np.ndarray
    edges: np.ndarray
    median: float
    mean: float
    fraction_equity: float
    fraction_mortgage: float
    fraction_censored: float


def empirical_hitting(stats: EnsembleStats, bins: int = 50) -> HittingSummary:
    """Histogram and summary of per-path first crossings; uncrossed paths are censored."""
    if not stats.stopped or stats.hit_time is None:
        raise NoHittingData("ensemble was run without stop_at_boundary")
    n = len(stats.hit_time)
    hit = ~np.isnan(stats.hit_time)
    times = stats.hit_time[hit]
    horizon = float(stats.t[-1]) if len(stats.t) else 0.0
    counts, edges = np.histogram(times, bins=bins, range=(0.0, max(horizon, 1.0)))
    return HittingSummary(
        counts=counts,
        edges=edges,
        median=float(np.median(times)) if times.size else math.nan,
        mean=float(np.mean(times)) if times.size else math.nan,
        fraction_equity=float(np.sum(stats.hit_boundary == HIT_EQUITY)) / n,
        fraction_mortgage=float(np.sum(stats.hit_boundary == HIT_MORTGAGE)) / n,
        fraction_censored=float(np.sum(~hit)) / n,
    )
