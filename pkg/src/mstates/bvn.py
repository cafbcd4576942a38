"""Standard bivariate normal cdf.

Vectorized port of Genz's refinement of the Drezner & Wesolowsky method
(Genz 2004, "Numerical computation of rectangular bivariate and trivariate
normal and t probabilities"). Absolute accuracy is about 1e-15.
"""

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

_TWO_PI = 2.0 * np.pi
_GL = {n: leggauss(n) for n in (6, 12, 20)}


def _upper_finite(h, k, r):
    """P(X > h, Y > k) for finite h, k and |r| <= 1, all 1-d arrays of equal size."""
    out = np.empty_like(h)
    absr = np.abs(r)

    small = absr < 0.925
    if np.any(small):
        hs, ks, rs = h[small], k[small], r[small]
        hk = hs * ks
        hsq = 0.5 * (hs * hs + ks * ks)
        asr = np.arcsin(rs)
        total = np.zeros_like(hs)
        for lo, hi, n in ((0.0, 0.3, 6), (0.3, 0.75, 12), (0.75, 1.0, 20)):
            sel = (np.abs(rs) >= lo) & (np.abs(rs) < hi)
            if not np.any(sel):
                continue
            x, w = _GL[n]
            sn = np.sin(0.5 * asr[sel, None] * (1.0 + x))
            terms = np.exp((sn * hk[sel, None] - hsq[sel, None]) / (1.0 - sn * sn))
            total[sel] = terms @ w
        out[small] = total * asr / (2.0 * _TWO_PI) + ndtr(-hs) * ndtr(-ks)

    big = ~small
    if np.any(big):
        hb, kb, rb = h[big], k[big].copy(), r[big]
        neg = rb < 0
        kb[neg] = -kb[neg]
        hk = hb * kb
        bvn = np.zeros_like(hb)
        interior = np.abs(rb) < 1.0
        if np.any(interior):
            hi_, ki, ri, hki = hb[interior], kb[interior], rb[interior], hk[interior]
            as_ = (1.0 - ri) * (1.0 + ri)
            a = np.sqrt(as_)
            bs = (hi_ - ki) ** 2
            c = (4.0 - hki) / 8.0
            d = (12.0 - hki) / 16.0
            val = a * np.exp(-(bs / as_ + hki) / 2.0) * (
                1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0
            )
            b = np.sqrt(bs)
            corr = np.where(
                hki > -160.0,
                np.exp(-np.minimum(hki, 700.0) / 2.0) * np.sqrt(_TWO_PI) * ndtr(-b / a) * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0),
                0.0,
            )
            val = val - corr
            x, w = _GL[20]
            half = a / 2.0
            xs = (half[:, None] * (x + 1.0)) ** 2
            rs = np.sqrt(1.0 - xs)
            expo = -(bs[:, None] / xs + hki[:, None]) / 2.0
            with np.errstate(over="ignore", invalid="ignore"):
                terms = np.exp(expo) * (
                    np.exp(-hki[:, None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                    - (1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs))
                )
            terms = np.where(expo > -100.0, terms, 0.0)
            val = val + half * (terms @ w)
            bvn[interior] = -val / _TWO_PI
        pos = rb > 0
        bvn[pos] = bvn[pos] + ndtr(-np.maximum(hb[pos], kb[pos]))
        negs = ~pos
        if np.any(negs):
            hn, kn, vn = hb[negs], kb[negs], bvn[negs]
            lower = np.where(hn < 0, ndtr(kn) - ndtr(hn), ndtr(-hn) - ndtr(-kn))
            vn = np.where(hn >= kn, -vn, lower - vn)
            bvn[negs] = vn
        out[big] = bvn
    return out


def bvn_cdf(x, y, rho):
    """P(X <= x, Y <= y) for standard normals with correlation ``rho``.

    Broadcasts over all three arguments. Infinite limits are allowed.
    """
    x, y, rho = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(rho, dtype=float)
    )
    shape = x.shape
    x, y, rho = x.ravel(), y.ravel(), rho.ravel()
    out = np.empty(x.shape)

    fin = np.isfinite(x) & np.isfinite(y)
    if np.any(fin):
        out[fin] = _upper_finite(-x[fin], -y[fin], rho[fin])
    if np.any(~fin):
        xi, yi = x[~fin], y[~fin]
        val = np.where(np.isposinf(xi), ndtr(yi), np.where(np.isposinf(yi), ndtr(xi), 0.0))
        val = np.where(np.isneginf(xi) | np.isneginf(yi), 0.0, val)
        out[~fin] = val
    return np.clip(out, 0.0, 1.0).reshape(shape)
