"""Fused mixture kernels for the refinement hot path.

Both kernels walk the points once and never materialize the (K, n)
component table. They are compiled with numba when it is importable;
``AVAILABLE`` tells callers whether to use them or the numpy path.
"""

from __future__ import annotations

import math

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

AVAILABLE = numba is not None


def _shifted_joint(X, means, inv_sig, const, joint):
    """Fill ``joint`` (n, K) with component log terms minus their row max.

    Returns the row maxima.
    """
    n, d = X.shape
    K = means.shape[0]
    top = np.empty(n)
    for i in range(n):
        best = -np.inf
        for k in range(K):
            sq = 0.0
            for j in range(d):
                z = (X[i, j] - means[k, j]) * inv_sig[k, j]
                sq += z * z
            v = const[k] - 0.5 * sq
            joint[i, k] = v
            if v > best:
                best = v
        if best == -np.inf:
            # every term underflowed; exp(-inf) = 0 keeps the row at zero
            for k in range(K):
                joint[i, k] = -np.inf
        else:
            for k in range(K):
                joint[i, k] -= best
        top[i] = best
    return top


def _normalize_rows(E, top):
    """Turn exponentiated rows into responsibilities in place; returns log g."""
    n, K = E.shape
    out = np.empty(n)
    for i in range(n):
        if top[i] == -np.inf:
            out[i] = -np.inf
            continue
        s = 0.0
        for k in range(K):
            s += E[i, k]
        out[i] = top[i] + math.log(s)
        inv = 1.0 / s
        for k in range(K):
            E[i, k] *= inv
    return out


def _mixture_weighted_moments(X, means, inv_sig, resp, c):
    """Per-component sums of ``c * r``, ``c * r * z`` and ``c * r * z**2``.

    ``r`` is the component responsibility at each point and ``z`` the
    standardized coordinate.
    """
    n, d = X.shape
    K = means.shape[0]
    s0 = np.zeros(K)
    s1 = np.zeros((K, d))
    s2 = np.zeros((K, d))
    for i in range(n):
        ci = c[i]
        if ci == 0.0:
            continue
        for k in range(K):
            w = ci * resp[i, k]
            s0[k] += w
            for j in range(d):
                z = (X[i, j] - means[k, j]) * inv_sig[k, j]
                s1[k, j] += w * z
                s2[k, j] += w * z * z
    return s0, s1, s2


if AVAILABLE:
    _shifted_joint = numba.njit(cache=True)(_shifted_joint)
    _normalize_rows = numba.njit(cache=True)(_normalize_rows)
    mixture_weighted_moments = numba.njit(cache=True)(_mixture_weighted_moments)
else:  # pragma: no cover
    mixture_weighted_moments = _mixture_weighted_moments


def mixture_logpdf(X, means, inv_sig, const):
    """log g at every row of ``X`` and the (n, K) responsibilities."""
    resp = np.empty((X.shape[0], means.shape[0]))
    top = _shifted_joint(X, means, inv_sig, const, resp)
    # the bulk exponential is faster as one vectorized ufunc call
    np.exp(resp, out=resp)
    return _normalize_rows(resp, top), resp
