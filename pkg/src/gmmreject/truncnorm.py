"""Standard normal truncated to ``[alpha, beta]``: mass, CDF, inverse-CDF draws.

Everything works on standardized bounds and stays in log space so that
intervals deep in either tail do not cancel to zero.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtri_exp

LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
# log(1e-300): below this mass the inverse CDF is no longer trusted
DEGENERATE_LOG_MASS = np.log(1e-300)


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > -np.log(2), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def log_mass(alpha, beta):
    """log(Phi(beta) - Phi(alpha)), accurate in both tails."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, dtype=float),
                                      np.asarray(beta, dtype=float))
    out = np.empty(alpha.shape)
    upper = alpha > 0
    lower = beta < 0
    mid = ~(upper | lower)
    with np.errstate(divide="ignore", invalid="ignore"):
        # mirror into the left tail: Phi(-alpha) - Phi(-beta)
        a, b = -beta[upper], -alpha[upper]
        la, lb = log_ndtr(a), log_ndtr(b)
        out[upper] = lb + _log1mexp(la - lb)
        la, lb = log_ndtr(alpha[lower]), log_ndtr(beta[lower])
        out[lower] = lb + _log1mexp(la - lb)
        tails = np.exp(log_ndtr(alpha[mid])) + np.exp(log_ndtr(-beta[mid]))
        out[mid] = np.log1p(-tails)
    return out


def log_pdf(z):
    return -0.5 * np.square(z) - LOG_SQRT_2PI


def cdf(z, alpha, beta):
    """CDF of the truncated standard normal at standardized ``z``."""
    z = np.clip(z, alpha, beta)
    return np.exp(log_mass(alpha, z) - log_mass(alpha, beta))


def dlog_mass(alpha, beta, lmass=None):
    """Derivatives of log mass with respect to ``alpha`` and ``beta``.

    d/d alpha = -phi(alpha)/Z, d/d beta = phi(beta)/Z, with the infinite
    bound terms taken as zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if lmass is None:
        lmass = log_mass(alpha, beta)
    with np.errstate(over="ignore"):
        ra = np.where(np.isfinite(alpha), np.exp(log_pdf(np.where(np.isfinite(alpha), alpha, 0.0)) - lmass), 0.0)
        rb = np.where(np.isfinite(beta), np.exp(log_pdf(np.where(np.isfinite(beta), beta, 0.0)) - lmass), 0.0)
    return -ra, rb


def sample(alpha, beta, u):
    """Inverse-CDF draws z in (alpha, beta) for uniforms ``u``.

    Returns ``(z, degenerate)`` where ``degenerate`` marks entries whose mass
    fell below 1e-300; those are drawn from the exponential approximation of
    the tail next to the nearer bound instead.
    """
    alpha, beta, u = np.broadcast_arrays(np.asarray(alpha, dtype=float),
                                         np.asarray(beta, dtype=float),
                                         np.asarray(u, dtype=float))
    # work in the left tail; mirror intervals that sit right of zero
    flip = alpha > 0
    a = np.where(flip, -beta, alpha)
    b = np.where(flip, -alpha, beta)
    lmass = log_mass(a, b)
    with np.errstate(divide="ignore"):
        la = log_ndtr(a)
        logp = np.logaddexp(la, np.log(u) + lmass)
    # logp must not pass log Phi(b)
    logp = np.minimum(logp, log_ndtr(b))
    z = ndtri_exp(logp)
    degenerate = ~(lmass > DEGENERATE_LOG_MASS)
    if degenerate.any():
        # both bounds deep in the same tail: the density is ~ exp(-|edge| t)
        # off the bound closest to the mode
        edge = np.where(np.abs(b) < np.abs(a), b, a)[degenerate]
        width = (b - a)[degenerate]
        rate = np.maximum(np.abs(edge), 1e-12)
        uu = u[degenerate]
        t = -np.log1p(-uu * -np.expm1(-rate * width)) / rate
        inward = np.where(np.abs(b[degenerate]) < np.abs(a[degenerate]), -1.0, 1.0)
        z[degenerate] = edge + inward * t
    z = np.where(flip, -z, z)
    lo = np.nextafter(alpha, np.inf)
    hi = np.nextafter(beta, -np.inf)
    return np.clip(z, lo, hi), degenerate
