"""Log-domain probability kernels used by every likelihood term.

All kernels broadcast over numpy arrays, so a leading batch axis of
parameter values (particles, posterior draws) can be evaluated in one call.
Invalid parameter values give ``-inf`` so that samplers reject them; invalid
*observations* passed directly by a caller raise :class:`DomainError` unless
``strict=False``.
"""

from __future__ import annotations

import numpy as np
from scipy import special
from scipy.special import gammaln, xlog1py, xlogy

from episynth.errors import DomainError

LOG_2PI = float(np.log(2.0 * np.pi))


def _scalarize(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def binomial_logpmf(y, n, p, strict: bool = True):
    """Exact binomial log pmf, with ``p`` in {0, 1} handled by limits.

    ``y > n`` raises under ``strict`` and gives ``-inf`` otherwise, which is
    how the likelihood terms treat an observation exceeding a latent count.
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    if strict and np.any((y > n) | (y < 0)):
        raise DomainError(f"binomial requires 0 <= y <= n, got y={y}, n={n}")
    with np.errstate(invalid="ignore", divide="ignore"):
        ok = (y >= 0) & (y <= n) & (p >= 0) & (p <= 1)
        pc = np.clip(p, 0.0, 1.0)
        yc = np.where(ok, y, 0.0)
        nc = np.where(ok, n, 0.0)
        out = (
            gammaln(nc + 1) - gammaln(yc + 1) - gammaln(nc - yc + 1)
            + xlogy(yc, pc) + xlog1py(nc - yc, -pc)
        )
        out = np.where(ok, out, -np.inf)
    return _scalarize(out)


def negbin_logpmf(y, mean, size, strict: bool = True):
    """Negative binomial log pmf with mean ``mean`` and size ``size``.

    Variance is ``mean + mean**2 / size``; ``size = inf`` is the Poisson limit.
    A nonpositive mean raises under ``strict``; otherwise a zero mean is a
    point mass at 0 and a negative one gives ``-inf``.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mean, dtype=float)
    r = np.asarray(size, dtype=float)
    if strict and (np.any(mu <= 0) or np.any(np.isnan(mu))):
        raise DomainError("negative binomial mean must be positive")
    if np.any(r <= 0):
        raise DomainError("negative binomial size must be positive")
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        finite = np.isfinite(r)
        rf = np.where(finite, r, 1.0)
        big = rf > 10.0
        rb = np.where(big, rf, 11.0)
        # lgamma(y+r) - lgamma(r) - y*log(r+mu), cancellation-free for large r
        a_big = (
            (rb - 0.5) * np.log1p(y / rb) + xlog1py(y, (y - mu) / (rb + mu)) - y
            + _stirling_tail(rb + y) - _stirling_tail(rb)
        )
        rs = np.where(big, 1.0, rf)
        a_small = gammaln(y + rs) - gammaln(rs) - xlogy(y, rs + mu)
        nb = np.where(big, a_big, a_small) - gammaln(y + 1) - rf * np.log1p(mu / rf) + xlogy(y, mu)
        po = xlogy(y, mu) - mu - gammaln(y + 1)
        out = np.where(finite, nb, po)
        out = np.where((y < 0) | (mu < 0) | np.isnan(mu), -np.inf, out)
    return _scalarize(out)


def _stirling_tail(x):
    """``lgamma(x) - [(x - 1/2) log x - x + log(2 pi)/2]`` for ``x > 10``."""
    x2 = x * x
    return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x


def poisson_logpmf(y, mean):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mean, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = xlogy(y, mu) - mu - gammaln(y + 1)
        out = np.where((mu < 0) | (y < 0), -np.inf, out)
    return _scalarize(out)


def normal_logpdf(x, mean, sd):
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (x - mean) / sd
        out = -0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z
        out = np.where(np.isfinite(out), out, -np.inf)
    return _scalarize(out)


def logit(p):
    return _scalarize(special.logit(np.asarray(p, dtype=float)))


def expit(x):
    return _scalarize(special.expit(np.asarray(x, dtype=float)))
