"""Empirical pairwise copula densities and corner tail statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np


@dataclass
class CopulaGrid:
    """Binned copula density on the unit square.

    ``density[a, b]`` is the density in the bin with ``u`` in bin ``a`` and
    ``v`` in bin ``b``; bins are ``[a/B, (a+1)/B)`` with the last one closed.
    """

    density: np.ndarray
    kind: str = "empirical"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.density.ndim != 2 or self.density.shape[0] != self.density.shape[1]:
            raise ValueError(f"copula grid must be square, got shape {self.density.shape}")

    @property
    def bins(self) -> int:
        return self.density.shape[0]

    @property
    def width(self) -> float:
        return 1.0 / self.bins

    @property
    def mass(self) -> np.ndarray:
        return self.density * self.width**2

    def total_mass(self) -> float:
        return float(self.mass.sum())

    def centers(self) -> np.ndarray:
        return (np.arange(self.bins) + 0.5) * self.width


@dataclass
class TailStats:
    LL: float
    UL: float
    UU: float
    LU: float

    @property
    def alpha(self) -> float:
        """Positive-tail asymmetry, upper-upper minus lower-lower."""
        return self.UU - self.LL

    @property
    def beta(self) -> float:
        """Negative-tail asymmetry, lower-upper minus upper-lower."""
        return self.LU - self.UL


def rank_transform(series) -> np.ndarray:
    """Empirical distribution function shifted by half a step into (0, 1).

    Ties all receive the largest count, as the indicator sum prescribes.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("rank_transform expects a non-empty 1-d series")
    T = x.size
    counts = np.searchsorted(np.sort(x), x, side="right")
    return (2 * counts - 1) / (2.0 * T)


def _bin_index(u, bins):
    return np.minimum((np.asarray(u) * bins).astype(np.int64), bins - 1)


def pair_copula_histogram(u, v, bins: int = 20) -> CopulaGrid:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"rank series must be 1-d with equal lengths, got {u.shape} and {v.shape}")
    if u.size == 0:
        raise ValueError("rank series are empty")
    counts = np.bincount(_bin_index(u, bins) * bins + _bin_index(v, bins), minlength=bins * bins)
    density = counts.reshape(bins, bins) * (bins * bins / u.size)
    return CopulaGrid(density, kind="empirical", meta={"pairs": 1})


def _as_panel(returns):
    """(values K x T, validity mask or None) from a ReturnMatrix or array."""
    values = np.asarray(getattr(returns, "values", returns), dtype=float)
    mask = getattr(returns, "mask", None)
    if mask is not None and np.all(mask):
        mask = None
    if values.ndim != 2:
        raise ValueError("returns must be a K x T matrix")
    return values, mask


def _ranks_masked(values, mask):
    ranks = np.full(values.shape, np.nan)
    for k in range(values.shape[0]):
        ok = mask[k]
        if ok.sum() > 0:
            ranks[k, ok] = rank_transform(values[k, ok])
    return ranks


def _pair_ranks(values, mask, k, l):
    """Ranks of the jointly valid points of stocks k and l."""
    ok = mask[k] & mask[l]
    return rank_transform(values[k, ok]), rank_transform(values[l, ok])


def state_average_copula(returns, bins: int = 20, chunk: int = 256) -> CopulaGrid:
    """Average of all K(K-1)/2 pairwise empirical copula densities of one state.

    Ranks are taken on the state's own series. Without excluded points the
    pair sum is accumulated with one-hot tensor contractions instead of a
    Python loop over pairs.
    """
    values, mask = _as_panel(returns)
    K, T = values.shape
    if K < 2:
        raise ValueError(f"need at least two stocks for a pairwise copula, got K={K}")
    n_pairs = K * (K - 1) // 2

    if mask is not None:
        total = np.zeros((bins, bins))
        for k, l in combinations(range(K), 2):
            u, v = _pair_ranks(values, mask, k, l)
            total += pair_copula_histogram(u, v, bins).density
        return CopulaGrid(total / n_pairs, kind="empirical", meta={"pairs": n_pairs})

    b = _bin_index(np.apply_along_axis(rank_transform, 1, values), bins).T  # T x K
    eye = np.eye(bins)
    counts = np.zeros((bins, bins))
    for start in range(0, T, chunk):
        onehot = eye[b[start:start + chunk]]  # t x K x B
        # later[t, k, :] = sum over l > k of onehot[t, l, :]
        later = np.cumsum(onehot[:, ::-1], axis=1)[:, ::-1] - onehot
        counts += onehot.reshape(-1, bins).T @ later.reshape(-1, bins)
    density = counts * (bins * bins / T) / n_pairs
    return CopulaGrid(density, kind="empirical", meta={"pairs": n_pairs})


def tail_corner_masses(grid: CopulaGrid) -> TailStats:
    """Copula mass in the four 0.2 x 0.2 corner squares."""
    B = grid.bins
    if B % 5:
        raise ValueError(
            f"bin count {B} is not divisible by 5, so 0.2 is not a bin edge; use e.g. B=20"
        )
    m = B // 5
    mass = grid.mass
    return TailStats(
        LL=float(mass[:m, :m].sum()),
        UL=float(mass[-m:, :m].sum()),
        UU=float(mass[-m:, -m:].sum()),
        LU=float(mass[:m, -m:].sum()),
    )


def tail_corner_masses_from_ranks(u, v) -> TailStats:
    u = np.asarray(u)
    v = np.asarray(v)
    lo_u, hi_u = u < 0.2, u >= 0.8
    lo_v, hi_v = v < 0.2, v >= 0.8
    T = u.size
    return TailStats(
        LL=np.count_nonzero(lo_u & lo_v) / T,
        UL=np.count_nonzero(hi_u & lo_v) / T,
        UU=np.count_nonzero(hi_u & hi_v) / T,
        LU=np.count_nonzero(lo_u & hi_v) / T,
    )


@dataclass
class AsymmetryResult:
    pairs: list
    LL: np.ndarray
    UL: np.ndarray
    UU: np.ndarray
    LU: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return self.UU - self.LL

    @property
    def beta(self) -> np.ndarray:
        return self.LU - self.UL

    def summary(self) -> dict:
        a, b = self.alpha, self.beta
        ddof1 = len(a) > 1
        return {
            "n_pairs": len(a),
            "alpha_mean": float(a.mean()),
            "beta_mean": float(b.mean()),
            "alpha_std_pop": float(a.std()),
            "beta_std_pop": float(b.std()),
            "alpha_std_sample": float(a.std(ddof=1)) if ddof1 else 0.0,
            "beta_std_sample": float(b.std(ddof=1)) if ddof1 else 0.0,
        }

    def histograms(self, bins: int = 30) -> dict:
        """Histogram counts of the per-pair asymmetries (shared edges for alpha and beta)."""
        both = np.concatenate([self.alpha, self.beta])
        span = max(float(np.abs(both).max()), 1e-12)
        edges = np.linspace(-span, span, bins + 1)
        return {
            "edges": edges,
            "alpha": np.histogram(self.alpha, edges)[0],
            "beta": np.histogram(self.beta, edges)[0],
        }


def state_asymmetry(returns, bins: int = 20) -> AsymmetryResult:
    """Per-pair corner masses and asymmetries for one state.

    The corners of a B-bin histogram with B divisible by 5 coincide with
    the 0.2 / 0.8 rank thresholds, so the masses are computed directly from
    rank indicators; all pairs at once via matrix products.
    """
    values, mask = _as_panel(returns)
    K, T = values.shape
    if K < 2:
        raise ValueError(f"need at least two stocks, got K={K}")
    if bins % 5:
        raise ValueError(f"bin count {bins} is not divisible by 5")
    pairs = list(combinations(range(K), 2))
    if mask is not None:
        stats = [tail_corner_masses_from_ranks(*_pair_ranks(values, mask, k, l)) for k, l in pairs]
        arr = {name: np.array([getattr(s, name) for s in stats]) for name in ("LL", "UL", "UU", "LU")}
        return AsymmetryResult(pairs, **arr)

    b = _bin_index(np.apply_along_axis(rank_transform, 1, values), bins)
    m = bins // 5
    lo = (b < m).astype(float)
    hi = (b >= bins - m).astype(float)
    iu = np.triu_indices(K, 1)
    return AsymmetryResult(
        pairs,
        LL=(lo @ lo.T)[iu] / T,
        UL=(hi @ lo.T)[iu] / T,
        UU=(hi @ hi.T)[iu] / T,
        LU=(lo @ hi.T)[iu] / T,
    )
