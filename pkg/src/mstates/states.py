"""Market states: k-medoids clustering of window correlation matrices."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mstates.timeseries import ReturnMatrix

log = logging.getLogger(__name__)

DISTANCE_NAME = "euclidean_upper_triangle"


@dataclass
class StateModel:
    k: int
    medoids: list
    labels: np.ndarray
    distance_name: str = DISTANCE_NAME
    cost: float = 0.0
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "k": int(self.k),
            "medoids": [int(m) for m in self.medoids],
            "labels": [int(x) for x in self.labels],
            "distance_name": self.distance_name,
            "cost": float(self.cost),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> StateModel:
        return cls(d["k"], list(d["medoids"]), np.asarray(d["labels"], int), d["distance_name"],
                   d.get("cost", 0.0), d.get("seed"))


@dataclass
class GapCurve:
    k: np.ndarray
    gap: np.ndarray
    s: np.ndarray
    W: np.ndarray
    records: list = field(default_factory=list)

    def rows(self):
        return [(int(k), float(g), float(s), float(w)) for k, g, s, w in zip(self.k, self.gap, self.s, self.W)]


def upper_triangle_features(correlations) -> np.ndarray:
    """Stack the strict upper triangles of the matrices into an M x K(K-1)/2 array."""
    mats = [np.asarray(getattr(c, "values", c)) for c in correlations]
    if not mats:
        raise ValueError("no correlation matrices supplied")
    K = mats[0].shape[0]
    if any(m.shape != (K, K) for m in mats):
        raise ValueError("correlation matrices differ in dimension")
    iu = np.triu_indices(K, 1)
    return np.stack([m[iu] for m in mats])


def _euclidean(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def distance_matrix(correlations) -> np.ndarray:
    """Euclidean distances between the vectorized strict upper triangles."""
    return _euclidean(upper_triangle_features(correlations))


def _assign(D, medoids):
    """Nearest and second-nearest medoid distances; ties go to the lowest window index."""
    med = np.asarray(sorted(medoids))
    sub = D[:, med]
    order = np.argsort(sub, axis=1, kind="stable")
    nearest = med[order[:, 0]]
    d1 = sub[np.arange(len(D)), order[:, 0]]
    d2 = sub[np.arange(len(D)), order[:, 1]] if len(med) > 1 else np.full(len(D), np.inf)
    return nearest, d1, d2


def _build(D, k):
    M = len(D)
    medoids = [int(np.argmin(D.sum(axis=0)))]
    nearest = D[:, medoids[0]].copy()
    for _ in range(1, k):
        gain = np.maximum(nearest[:, None] - D, 0.0).sum(axis=0)
        gain[medoids] = -1.0
        m = int(np.argmax(gain))
        medoids.append(m)
        nearest = np.minimum(nearest, D[:, m])
    assert len(set(medoids)) == k <= M
    return medoids


def pam(D: np.ndarray, k: int, max_iter: int = 1000):
    """BUILD + SWAP k-medoids on a distance matrix.

    Each SWAP pass takes the best single medoid/non-medoid exchange and stops
    when none lowers the total cost. Returns (sorted medoids, nearest medoid
    per point, total cost, cost history).
    """
    D = np.asarray(D, dtype=float)
    M = len(D)
    if not 1 <= k <= M:
        raise ValueError(f"k={k} must lie in [1, {M}]")
    medoids = _build(D, k)
    nearest, d1, d2 = _assign(D, medoids)
    cost = float(d1.sum())
    history = [cost]
    tol = 1e-12 * max(cost, 1.0)
    for _ in range(max_iter):
        best = (0.0, None, None)
        is_med = np.zeros(M, bool)
        is_med[medoids] = True
        for i in sorted(medoids):
            # cost after replacing medoid i by every candidate h at once
            own = nearest == i
            keep = np.where(own, d2, d1)
            new = np.minimum(D, keep[:, None]).sum(axis=0)
            new[is_med] = np.inf
            h = int(np.argmin(new))
            delta = new[h] - cost
            if delta < best[0] - tol:
                best = (delta, i, h)
        if best[1] is None:
            break
        medoids = [best[2] if m == best[1] else m for m in medoids]
        nearest, d1, d2 = _assign(D, medoids)
        cost = float(d1.sum())
        history.append(cost)
    return sorted(medoids), nearest, cost, history


def pam_cluster(distances: np.ndarray, k: int, seed: int | None = None) -> StateModel:
    """Cluster windows into k states; state ids follow the first appearance in time."""
    medoids, nearest, cost, _ = pam(distances, k)
    for m in medoids:
        nearest[m] = m
    order = list(dict.fromkeys(nearest.tolist()))
    relabel = {m: i + 1 for i, m in enumerate(order)}
    labels = np.array([relabel[m] for m in nearest], dtype=int)
    medoids_by_state = sorted(medoids, key=lambda m: relabel[m])
    return StateModel(k, medoids_by_state, labels, DISTANCE_NAME, cost, seed)


def within_dispersion(D: np.ndarray, nearest: np.ndarray) -> float:
    """Sum over clusters of squared pairwise distances / (2 * cluster size)."""
    W = 0.0
    D2 = D * D
    for m in np.unique(nearest):
        idx = np.flatnonzero(nearest == m)
        W += D2[np.ix_(idx, idx)].sum() / (2.0 * len(idx))
    return W


def _dispersions(D, k_values):
    out = []
    for k in k_values:
        _, nearest, _, _ = pam(D, k)
        out.append(within_dispersion(D, nearest))
    return np.array(out)


def gap_select_k(
    features: np.ndarray,
    k_max: int = 10,
    n_ref: int = 50,
    seed: int = 0,
    threads: int = 1,
    reference: str = "pca",
) -> tuple[int, GapCurve]:
    """Choose the number of states with the gap statistic.

    References are drawn uniformly in a box around ``features`` (the
    vectorized correlation triangles): aligned with the principal axes of the
    centered features for ``reference="pca"``, with the coordinate axes for
    ``"box"``. k* is the smallest k with Gap(k) >= Gap(k+1) - s(k+1).
    """
    if reference not in ("pca", "box"):
        raise ValueError(f"unknown reference distribution {reference!r}")
    X = np.asarray(features, dtype=float)
    M = X.shape[0]
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    empty = GapCurve(np.array([1]), np.array([0.0]), np.array([0.0]), np.array([0.0]))
    if M < 2:
        return 1, empty
    D = _euclidean(X)
    if np.all(D == 0):
        log.info("all windows identical; selecting a single state")
        return 1, empty
    k_top = min(k_max, M - 1)
    ks = np.arange(1, k_top + 1)
    W = _dispersions(D, ks)
    if np.any(W <= 0):
        # exact duplicates collapse dispersion; restrict to k with positive W
        ks = ks[W > 0]
        W = W[W > 0]

    center = X.mean(axis=0)
    if reference == "pca":
        _, _, axes = np.linalg.svd(X - center, full_matrices=False)
        Y = (X - center) @ axes.T
    else:
        Y = X
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    children = np.random.SeedSequence(seed).spawn(n_ref)

    def draw(ss):
        rng = np.random.default_rng(ss)
        Z = lo + (hi - lo) * rng.random(Y.shape)
        if reference == "pca":
            Z = Z @ axes + center
        return np.log(_dispersions(_euclidean(Z), ks))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            logs = np.array(list(ex.map(draw, children)))
    else:
        logs = np.array([draw(c) for c in children])
    gap = logs.mean(axis=0) - np.log(W)
    s = logs.std(axis=0) * np.sqrt(1.0 + 1.0 / n_ref)
    k_star = int(ks[-1])
    for j in range(len(ks) - 1):
        if gap[j] >= gap[j + 1] - s[j + 1]:
            k_star = int(ks[j])
            break
    return k_star, GapCurve(ks, gap, s, W)


def assemble_state_series(returns: ReturnMatrix, windows, labels, state: int) -> ReturnMatrix:
    """Chronological concatenation of all windows labeled ``state``."""
    labels = np.asarray(labels)
    if len(labels) != len(windows):
        raise ValueError(f"{len(labels)} labels for {len(windows)} windows")
    chosen = [sl for (_, sl), lab in zip(windows, labels) if lab == state]
    if not chosen:
        raise ValueError(f"state {state} has no windows")
    cols = np.concatenate([np.arange(sl.start, sl.stop) for sl in chosen])
    return returns.take(cols)
