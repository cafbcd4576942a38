"""Price and return panels, local normalization, windowing and correlations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

ORIGINAL = "original"
LOCALLY_NORMALIZED = "locally_normalized"


@dataclass
class PriceMatrix:
    tickers: list
    dates: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.tickers = list(self.tickers)
        self.dates = list(self.dates)
        if self.values.ndim != 2:
            raise ValueError("price values must be a K x (T+1) matrix")
        if self.values.shape != (len(self.tickers), len(self.dates)):
            raise ValueError(
                f"price matrix shape {self.values.shape} does not match "
                f"{len(self.tickers)} tickers x {len(self.dates)} dates"
            )
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        bad = np.argwhere(~(self.values > 0))
        if bad.size:
            k, t = bad[0]
            raise ValueError(
                f"non-positive price {self.values[k, t]!r} for ticker {self.tickers[k]} "
                f"on {self.dates[t]}"
            )


@dataclass
class ReturnMatrix:
    """K x T returns. ``mask`` marks usable points (None means all usable).

    Excluded points hold 0.0 in ``values`` so the stored matrix never has NaN.
    """

    tickers: list
    dates: list
    values: np.ndarray
    kind: str = ORIGINAL
    mask: np.ndarray | None = None
    excluded: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.tickers), len(self.dates)):
            raise ValueError("return matrix shape does not match tickers x dates")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ValueError("mask shape must match values")

    @property
    def shape(self):
        return self.values.shape

    def valid(self) -> np.ndarray:
        return np.ones(self.values.shape, bool) if self.mask is None else self.mask

    def take(self, cols) -> ReturnMatrix:
        """Sub-panel on the given time indices (slice or index array)."""
        cols = np.arange(self.values.shape[1])[cols]
        mask = None if self.mask is None else self.mask[:, cols]
        return ReturnMatrix(
            self.tickers,
            [self.dates[i] for i in cols],
            self.values[:, cols],
            self.kind,
            mask,
        )


@dataclass(frozen=True)
class WindowSpec:
    window_length: int = 42

    def __post_init__(self):
        if int(self.window_length) != self.window_length or self.window_length < 2:
            raise ValueError(f"window_length must be an integer >= 2, got {self.window_length}")


@dataclass
class CorrelationMatrix:
    values: np.ndarray
    window_index: int = 0
    flagged: tuple = ()


def compute_returns(prices: PriceMatrix, dt: int = 1) -> ReturnMatrix:
    """Simple returns over ``dt`` steps: (S(t+dt) - S(t)) / S(t)."""
    if dt < 1:
        raise ValueError("return interval must be a positive integer")
    S = prices.values
    if S.shape[1] <= dt:
        raise ValueError(f"need more than {dt} price points, got {S.shape[1]}")
    r = (S[:, dt:] - S[:, :-dt]) / S[:, :-dt]
    return ReturnMatrix(prices.tickers, prices.dates[dt:], r, ORIGINAL)


def local_normalize(returns: ReturnMatrix, n: int = 13, rel_tol: float = 1e-12) -> ReturnMatrix:
    """Standardize each return by the mean and population std of its trailing n points.

    The trailing window includes the current point, so the first n-1 days
    are dropped. A window with (numerically) zero variance excludes that
    point; ``excluded`` reports the count per ticker.
    """
    if returns.kind != ORIGINAL:
        raise ValueError("local normalization expects original returns")
    r = returns.values
    K, T = r.shape
    if T < n:
        raise ValueError(f"series of length {T} shorter than local window n={n}")
    win = sliding_window_view(r, n, axis=1)  # K x (T-n+1) x n
    mean = win.mean(axis=2)
    std = win.std(axis=2)
    scale = np.abs(win).max(axis=2)
    ok = std > rel_tol * scale
    if returns.mask is not None:
        ok &= sliding_window_view(returns.mask, n, axis=1).all(axis=2)
    out = np.zeros_like(mean)
    np.divide(r[:, n - 1:] - mean, std, out=out, where=ok)
    excluded = {t: int(c) for t, c in zip(returns.tickers, (~ok).sum(axis=1)) if c}
    if excluded:
        log.warning("local normalization excluded zero-variance points: %s", excluded)
    return ReturnMatrix(
        returns.tickers,
        returns.dates[n - 1:],
        out,
        LOCALLY_NORMALIZED,
        None if ok.all() else ok,
        excluded,
    )


def partition_windows(returns, spec: WindowSpec = WindowSpec()) -> list:
    """Consecutive disjoint windows as (index, slice); a short remainder is dropped."""
    T = returns.values.shape[1] if hasattr(returns, "values") else int(returns)
    L = spec.window_length
    if T < L:
        raise ValueError(f"series length {T} shorter than window length {L}")
    return [(i, slice(i * L, (i + 1) * L)) for i in range(T // L)]


def _pearson(x: np.ndarray):
    """Population-moment Pearson matrix of the rows of x and zero-variance flags."""
    xc = x - x.mean(axis=1, keepdims=True)
    cov = xc @ xc.T / x.shape[1]
    sd = np.sqrt(np.diag(cov))
    zero = sd <= 1e-12 * np.maximum(np.abs(x).max(axis=1), 1e-300)
    sd_safe = np.where(zero, 1.0, sd)
    corr = cov / np.outer(sd_safe, sd_safe)
    corr[zero, :] = 0.0
    corr[:, zero] = 0.0
    return corr, zero


def _finish(corr):
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def correlation_matrix(returns: ReturnMatrix, window=slice(None), window_index: int = 0) -> CorrelationMatrix:
    """Pearson correlations over one time range, pairwise over jointly valid points."""
    x = returns.values[:, window]
    if x.shape[1] < 2:
        raise ValueError("correlation window needs at least two time points")
    K = x.shape[0]
    if returns.mask is None or returns.mask[:, window].all():
        corr, zero = _pearson(x)
    else:
        m = returns.mask[:, window]
        if np.any(m.sum(axis=1) < 2):
            raise ValueError("a stock has fewer than two usable points in the window")
        corr = np.zeros((K, K))
        zero = np.zeros(K, bool)
        for k in range(K):
            for l in range(k + 1, K):
                ok = m[k] & m[l]
                if ok.sum() < 2:
                    continue
                c2, z2 = _pearson(x[[k, l]][:, ok])
                corr[k, l] = corr[l, k] = c2[0, 1]
                zero[k] |= z2[0]
                zero[l] |= z2[1]
    flagged = tuple(int(i) for i in np.flatnonzero(zero))
    if flagged:
        log.warning("window %d: zero-variance stocks %s set to zero correlation", window_index, flagged)
    return CorrelationMatrix(_finish(corr), window_index, flagged)


def average_correlation(returns: ReturnMatrix, pairs=None) -> float:
    """Mean Pearson coefficient over the given (k, l) pairs, default all pairs."""
    corr = correlation_matrix(returns).values
    K = corr.shape[0]
    if pairs is None:
        iu = np.triu_indices(K, 1)
    else:
        pairs = list(pairs)
        iu = (np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    if len(iu[0]) == 0:
        raise ValueError("average correlation needs at least one pair")
    return float(corr[iu].mean())
