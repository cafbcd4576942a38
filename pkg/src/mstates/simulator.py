"""Synthetic markets drawn from the Wishart-averaged random matrix model.

Returns at each day are normal with a covariance ``(2 z / N) * Sigma``,
``z ~ Gamma(N/2, 1)``, which is the K-distribution after averaging over the
Wishart ensemble. Regimes with their own (c, N) stand in for market states.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from mstates.timeseries import ORIGINAL, PriceMatrix, ReturnMatrix

log = logging.getLogger(__name__)

CHUNK_DAYS = 4096
START_PRICE = 100.0
MAX_RESAMPLE_FRACTION = 1e-3


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Segment:
    length: int
    c: float
    N: float
    volatility: float = 0.02
    regime: int | None = None

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("segment length must be >= 1")
        if not -1.0 < self.c < 1.0:
            raise ValueError(f"segment correlation must lie in (-1, 1), got {self.c}")
        if not self.N > 0:
            raise ValueError("segment N must be positive")
        if not self.volatility > 0:
            raise ValueError("segment volatility must be positive")


@dataclass(frozen=True)
class RegimeSchedule:
    segments: tuple
    n_stocks: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("schedule has no segments")
        if self.n_stocks < 1:
            raise ValueError("need at least one stock")
        for s in self.segments:
            if s.c < -1.0 / max(self.n_stocks - 1, 1):
                raise ValueError(f"equicorrelation {s.c} is not positive definite for K={self.n_stocks}")

    @property
    def days(self) -> int:
        return sum(s.length for s in self.segments)


def equicorrelation(K: int, c: float, volatility: float = 1.0) -> np.ndarray:
    sigma = np.full((K, K), c * volatility**2)
    np.fill_diagonal(sigma, volatility**2)
    return sigma


def _cholesky(sigma):
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if not np.allclose(sigma, sigma.T):
        raise ValueError("covariance matrix must be symmetric")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("covariance matrix must be positive definite") from None


def _mixture_draws(chol, N, T, seed):
    """T x K draws, generated in fixed-size chunks with spawned seeds so the
    output does not depend on how chunks are scheduled."""
    K = chol.shape[0]
    n_chunks = max(1, -(-T // CHUNK_DAYS))
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(n_chunks)
    out = np.empty((T, K))
    for i, ss in enumerate(seeds):
        lo, hi = i * CHUNK_DAYS, min((i + 1) * CHUNK_DAYS, T)
        rng = np.random.default_rng(ss)
        z = rng.gamma(N / 2.0, 1.0, size=hi - lo)
        eps = rng.standard_normal((hi - lo, K))
        out[lo:hi] = np.sqrt(2.0 * z / N)[:, None] * (eps @ chol.T)
    return out


def _dates(n: int, start: str = "2000-01-03") -> list:
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")
    return [str(d) for d in days]


def sample_k_returns(K: int, sigma, N: float, T: int, seed) -> ReturnMatrix:
    """T independent K-distributed return vectors with average covariance ``sigma``."""
    if N <= 0:
        raise ValueError("N must be positive")
    chol = _cholesky(sigma)
    if chol.shape[0] != K:
        raise ValueError(f"covariance is {chol.shape[0]}x{chol.shape[0]}, expected {K}x{K}")
    draws = _mixture_draws(chol, N, T, seed)
    return ReturnMatrix([f"S{k:03d}" for k in range(K)], _dates(T), draws.T, ORIGINAL)


def sample_wishart_model_matrix(K: int, sigma, N: int, seed, size: int | None = None) -> np.ndarray:
    """Model matrix A (K x N) with i.i.d. columns ~ Normal(0, sigma / N), so E[A A^T] = sigma.

    With ``size`` given, returns a stack of shape (size, K, N).
    """
    if isinstance(N, bool) or int(N) != N or N < 1:
        raise ValueError(f"the Wishart constructor needs an integer N >= 1, got {N}")
    N = int(N)
    chol = _cholesky(sigma)
    if chol.shape[0] != K:
        raise ValueError(f"covariance is {chol.shape[0]}x{chol.shape[0]}, expected {K}x{K}")
    rng = np.random.default_rng(seed)
    shape = (K, N) if size is None else (size, K, N)
    g = rng.standard_normal(shape)
    return (chol @ g) / np.sqrt(N)


def simulate_market(schedule: RegimeSchedule, window_length: int = 42, lead_in: int = 13):
    """Prices for a regime schedule plus ground-truth labels.

    Returns ``(prices, day_labels, window_labels)``. ``day_labels`` gives the
    1-based regime id of each return day; segments share a regime when their
    ``regime`` fields match or, if unset, when (c, N, volatility) match. ``window_labels`` is the majority
    regime of each pipeline window, where windows start ``lead_in`` price
    points into the series (one return step plus n-1 = 12 local-normalization
    days by default).
    """
    K = schedule.n_stocks
    ss = np.random.SeedSequence(schedule.seed)
    seg_seeds = ss.spawn(len(schedule.segments))
    blocks, labels = [], []
    resampled = 0
    regime_ids = {}
    for seg in schedule.segments:
        key = seg.regime if seg.regime is not None else (seg.c, seg.N, seg.volatility)
        regime_ids.setdefault(key, len(regime_ids) + 1)
    for sid, (seg, seg_ss) in enumerate(zip(schedule.segments, seg_seeds), start=1):
        chol = _cholesky(equicorrelation(K, seg.c, seg.volatility))
        main, extra = seg_ss.spawn(2)
        r = _mixture_draws(chol, seg.N, seg.length, main)
        bad = np.flatnonzero(np.any(np.abs(r) >= 1.0, axis=1))
        while bad.size:
            resampled += bad.size
            if resampled > MAX_RESAMPLE_FRACTION * schedule.days:
                raise SimulationError(
                    f"resampled {resampled} of {schedule.days} days with |r| >= 1 "
                    f"(segment {sid}: c={seg.c}, N={seg.N}, volatility={seg.volatility}); "
                    "lower the volatility"
                )
            redo = _mixture_draws(chol, seg.N, bad.size, extra.spawn(1)[0])
            r[bad] = redo
            bad = bad[np.any(np.abs(redo) >= 1.0, axis=1)]
        blocks.append(r)
        key = seg.regime if seg.regime is not None else (seg.c, seg.N, seg.volatility)
        labels.extend([regime_ids[key]] * seg.length)
    if resampled:
        log.info("resampled %d days with |r| >= 1", resampled)
    returns = np.vstack(blocks).T  # K x T
    growth = np.cumprod(1.0 + returns, axis=1)
    values = np.hstack([np.full((K, 1), START_PRICE), START_PRICE * growth])
    prices = PriceMatrix([f"S{k:03d}" for k in range(K)], _dates(values.shape[1]), values)
    day_labels = np.asarray(labels)
    return prices, day_labels, window_truth(day_labels, window_length, lead_in - 1)


def window_truth(day_labels, window_length: int, offset: int) -> np.ndarray:
    """Majority regime per window of ``window_length`` return days after ``offset``."""
    lab = np.asarray(day_labels)[offset:]
    n = len(lab) // window_length
    out = np.empty(n, dtype=int)
    for i in range(n):
        vals, counts = np.unique(lab[i * window_length:(i + 1) * window_length], return_counts=True)
        out[i] = vals[np.argmax(counts)]
    return out
