"""Bivariate K-distribution and K-copula.

The K-distribution is a Gaussian scale mixture: with ``z ~ Gamma(N/2, 1)``
the return vector is normal with covariance ``(2 z / N) * Sigma``. Every cdf
below is an expectation over ``z`` of a normal or bivariate-normal cdf; the
expectation is evaluated with a trapezoid rule in ``log z``, which converges
exponentially because the integrand is analytic in that variable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize
from scipy.special import gammaln, kve, ndtr, ndtri

from mstates.bvn import bvn_cdf
from mstates.empirical_copula import CopulaGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KCopulaParams:
    c: float
    N: float

    def __post_init__(self):
        if not -1.0 < self.c < 1.0:
            raise ValueError(f"correlation c must lie in (-1, 1), got {self.c}")
        if not self.N > 0:
            raise ValueError(f"fluctuation parameter N must be positive, got {self.N}")


@dataclass(frozen=True)
class QuadratureSpec:
    """Accuracy controls for the z-mixture integral."""

    tol_1d: float = 1e-8
    tol_2d: float = 1e-6
    max_halvings: int = 6
    lower_tail: float = 1e-15
    upper_tail: float = 1e-17

    def __post_init__(self):
        if self.tol_1d <= 0 or self.tol_2d <= 0:
            raise ValueError("quadrature tolerances must be positive")


DEFAULT_QUADRATURE = QuadratureSpec()
_BASE_STEP = 0.5


@lru_cache(maxsize=512)
def _mixture_rule(N: float, level: int, lower_tail: float, upper_tail: float):
    """Nodes ``s = sqrt(2 z / N)`` and weights for E_z[g(s)], z ~ Gamma(N/2, 1)."""
    from scipy.stats import gamma

    a = N / 2.0
    # lower cut: P(z < e^t) ~ e^{a t} / Gamma(a + 1)
    t_lo = (math.log(lower_tail) + gammaln(a + 1.0)) / a
    q_lo = gamma.ppf(lower_tail, a)
    if q_lo > 0:
        t_lo = max(t_lo, math.log(q_lo))
    t_hi = math.log(gamma.isf(upper_tail, a))
    step = _BASE_STEP * min(1.0, 1.0 / math.sqrt(a)) / 2.0**level
    t = np.arange(t_lo, t_hi + step, step)
    logw = a * t - np.exp(t) - gammaln(a)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    keep = w > 0
    s = np.sqrt(2.0 * np.exp(t[keep]) / N)
    s.setflags(write=False)
    w = w[keep]
    w.setflags(write=False)
    return s, w


def _rule(N, level, quad):
    return _mixture_rule(float(N), int(level), quad.lower_tail, quad.upper_tail)


def _adaptive(evaluate, N, tol, quad):
    """Halve the step until two successive estimates agree to ``tol``."""
    prev = evaluate(*_rule(N, 0, quad))
    for level in range(1, quad.max_halvings + 1):
        cur = evaluate(*_rule(N, level, quad))
        if np.all(np.abs(cur - prev) <= tol):
            return cur, level
        prev = cur
    log.warning("z-mixture quadrature did not reach tol=%g for N=%g", tol, N)
    return prev, quad.max_halvings


def _marginal_cdf_rule(x, s, w):
    x = np.asarray(x, dtype=float)
    return ndtr(x[..., None] / s) @ w


def _bivariate_cdf_rule(x, y, c, s, w):
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return bvn_cdf(x[..., None] / s, y[..., None] / s, c) @ w


def _log_bessel_k(nu, x):
    """log K_nu(x) for x > 0, robust to under/overflow."""
    nu = abs(nu)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        val = np.log(kve(nu, x)) - x
    bad = ~np.isfinite(val)
    if np.any(bad) and nu > 0:
        # small-argument asymptote K_nu(x) ~ Gamma(nu)/2 (2/x)^nu
        xb = np.asarray(x)[bad] if np.ndim(x) else x
        val[bad] = gammaln(nu) - math.log(2.0) + nu * np.log(2.0 / xb)
    return val


def k_pdf_multivariate(r, sigma, N: float) -> np.ndarray:
    """Closed Bessel form of the K-distribution density.

    ``r`` has shape (..., K); ``sigma`` is the K x K average covariance.
    Returns +inf at the origin when N <= K.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    K = sigma.shape[0]
    if not np.allclose(sigma, sigma.T):
        raise ValueError("covariance matrix must be symmetric")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("covariance matrix must be positive definite") from None
    if N <= 0:
        raise ValueError("N must be positive")
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != K:
        raise ValueError(f"last axis of r must have length {K}")
    sol = np.linalg.solve(chol, np.moveaxis(r, -1, 0).reshape(K, -1))
    quad_form = np.sum(sol * sol, axis=0).reshape(r.shape[:-1])
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))

    nu = (K - N) / 2.0
    log_norm = (
        (2.0 - N) / 2.0 * math.log(2.0)
        + K / 2.0 * math.log(N)
        - gammaln(N / 2.0)
        - 0.5 * (K * math.log(2.0 * math.pi) + log_det)
    )
    x = np.sqrt(N * quad_form)
    out = np.empty_like(x, dtype=float)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        out[pos] = np.exp(log_norm + _log_bessel_k(nu, xp) - nu * np.log(xp))
    if np.any(~pos):
        if N > K:
            # mixture integral at r = 0 reduces to a Gamma function ratio
            log_origin = (
                K / 2.0 * math.log(N / (4.0 * math.pi))
                - gammaln(N / 2.0)
                + gammaln((N - K) / 2.0)
                - 0.5 * log_det
            )
            out[~pos] = math.exp(log_origin)
        else:
            out[~pos] = np.inf
    return out if out.ndim else float(out)


def k_pdf_bivariate(r1, r2, params: KCopulaParams):
    c = params.c
    sigma = np.array([[1.0, c], [c, 1.0]])
    r = np.stack(np.broadcast_arrays(np.asarray(r1, float), np.asarray(r2, float)), axis=-1)
    return k_pdf_multivariate(r, sigma, params.N)


def k_marginal_pdf(x, N: float):
    x = np.asarray(x, dtype=float)
    return k_pdf_multivariate(x[..., None], np.eye(1), N)


def k_marginal_cdf(x, N: float, quad: QuadratureSpec = DEFAULT_QUADRATURE):
    """Marginal cdf of one K-distributed return with unit variance."""
    if N <= 0:
        raise ValueError("N must be positive")
    x = np.asarray(x, dtype=float)
    val, _ = _adaptive(lambda s, w: _marginal_cdf_rule(x, s, w), N, quad.tol_1d, quad)
    return val if val.ndim else float(val)


def _quantile_on_rule(u, s, w):
    """Invert the marginal cdf defined by one fixed node set."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.empty_like(u)
    for i, ui in enumerate(u):
        if ui == 0.5:
            out[i] = 0.0
            continue
        lo_u = min(ui, 1.0 - ui)
        f = lambda x: float(_marginal_cdf_rule(x, s, w)) - lo_u
        # heavier than normal: the normal quantile scaled up brackets the root
        hi = 0.0
        lo = min(ndtri(lo_u), -1.0)
        while f(lo) > 0:
            lo *= 2.0
        root = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        out[i] = root if ui < 0.5 else -root
    return out


def k_marginal_quantile(u, N: float, quad: QuadratureSpec = DEFAULT_QUADRATURE):
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise ValueError("quantile argument must lie strictly inside (0, 1)")
    _, level = _adaptive(
        lambda s, w: _marginal_cdf_rule(np.linspace(-8, 8, 17), s, w), N, quad.tol_1d, quad
    )
    q = _quantile_on_rule(u_arr.ravel(), *_rule(N, level, quad)).reshape(u_arr.shape)
    return q if q.ndim else float(q)


def k_bivariate_cdf(r1, r2, params: KCopulaParams, quad: QuadratureSpec = DEFAULT_QUADRATURE):
    val, _ = _adaptive(
        lambda s, w: _bivariate_cdf_rule(r1, r2, params.c, s, w), params.N, quad.tol_2d, quad
    )
    return val if val.ndim else float(val)


def _copula_on_rule(u, v, c, s, w):
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))

    def quant(p):
        out = np.empty_like(p)
        out[p <= 0] = -np.inf
        out[p >= 1] = np.inf
        inner = (p > 0) & (p < 1)
        if np.any(inner):
            uniq, inv = np.unique(p[inner], return_inverse=True)
            out[inner] = _quantile_on_rule(uniq, s, w)[inv]
        return out

    return _bivariate_cdf_rule(quant(u), quant(v), c, s, w)


def k_copula_cdf(u, v, params: KCopulaParams, quad: QuadratureSpec = DEFAULT_QUADRATURE):
    """K-copula Cop(u, v) = F_{c,N}(q(u), q(v)), with q the marginal quantile."""
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    if np.any((u_arr < 0) | (u_arr > 1) | (v_arr < 0) | (v_arr > 1)):
        raise ValueError("copula arguments must lie in [0, 1]")
    val, _ = _adaptive(
        lambda s, w: _copula_on_rule(u_arr, v_arr, params.c, s, w), params.N, quad.tol_2d, quad
    )
    val = np.clip(val, 0.0, 1.0)
    return val if val.ndim else float(val)


def _grid_from_cdf(cop: np.ndarray, bins: int) -> np.ndarray:
    """Four-corner finite difference of a (B+1) x (B+1) cdf table into densities."""
    mass = cop[1:, 1:] - cop[1:, :-1] - cop[:-1, 1:] + cop[:-1, :-1]
    return mass * bins * bins


def k_copula_density_grid(
    params: KCopulaParams, bins: int = 20, quad: QuadratureSpec = DEFAULT_QUADRATURE
) -> CopulaGrid:
    """Binned K-copula density: per-bin mass from Cop differences, divided by the bin area."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    uu, vv = np.meshgrid(edges, edges, indexing="ij")
    cop = k_copula_cdf(uu, vv, params, quad)
    return CopulaGrid(
        _grid_from_cdf(cop, bins),
        kind="analytic",
        meta={"c": params.c, "N": params.N},
    )


def gaussian_copula_density_grid(c: float, bins: int = 20) -> CopulaGrid:
    """Binned Gaussian copula density, the N -> infinity limit of the K-copula."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    q = ndtri(edges)
    qq1, qq2 = np.meshgrid(q, q, indexing="ij")
    cop = bvn_cdf(qq1, qq2, c)
    return CopulaGrid(_grid_from_cdf(cop, bins), kind="analytic", meta={"c": c, "N": math.inf})


def grid_msd(empirical: CopulaGrid, analytic: CopulaGrid) -> float:
    a = np.asarray(getattr(empirical, "density", empirical), dtype=float)
    b = np.asarray(getattr(analytic, "density", analytic), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _golden_section(f, lo, hi, width):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > width:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


@dataclass
class FitResult:
    N: float
    msd: float
    at_boundary: bool
    scan: list


def fit_N(
    empirical: CopulaGrid,
    c_bar: float,
    bounds: tuple[float, float] = (1.0, 500.0),
    n_scan: int = 25,
    rel_width: float = 1e-3,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> FitResult:
    """Least-squares fit of N against an empirical copula grid at fixed correlation.

    A log-spaced scan brackets the minimum, then golden-section search refines
    it until the bracket is narrower than ``rel_width`` relative to N.
    """
    if not -1.0 < c_bar < 1.0:
        raise ValueError(f"average correlation must lie in (-1, 1), got {c_bar}")
    dens = np.asarray(empirical.density, dtype=float)
    if not np.all(np.isfinite(dens)):
        raise ValueError("empirical grid contains non-finite densities")
    bins = dens.shape[0]
    lo_b, hi_b = bounds

    def objective(N):
        return grid_msd(dens, k_copula_density_grid(KCopulaParams(c_bar, N), bins, quad).density)

    grid_n = np.geomspace(lo_b, hi_b, n_scan)
    vals = [objective(n) for n in grid_n]
    i = int(np.argmin(vals))
    lo = grid_n[max(i - 1, 0)]
    hi = grid_n[min(i + 1, n_scan - 1)]
    # search in log N: the objective varies on a relative scale
    t_best, msd = _golden_section(
        lambda t: objective(math.exp(t)), math.log(lo), math.log(hi), rel_width
    )
    n_best = math.exp(t_best)
    if vals[i] < msd:
        n_best, msd = float(grid_n[i]), vals[i]
    at_boundary = n_best <= lo_b * (1 + rel_width) or n_best >= hi_b * (1 - rel_width)
    if at_boundary:
        log.warning("fit_N hit the search boundary: N=%g in [%g, %g]", n_best, lo_b, hi_b)
    return FitResult(float(n_best), float(msd), bool(at_boundary), list(zip(grid_n.tolist(), vals)))


def wishart_ensemble_variance(sigma_kl, sigma_kk, sigma_ll, N: float):
    """Variance of one entry of the Wishart matrix A A^T around its mean."""
    if N <= 0:
        raise ValueError("N must be positive")
    return (np.square(sigma_kl) + np.multiply(sigma_kk, sigma_ll)) / N
