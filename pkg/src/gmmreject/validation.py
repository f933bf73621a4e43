"""Input validation helpers in the style of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np

from .target import Domain, LogTarget


def check_points(X, dims=None, allow_empty=False) -> np.ndarray:
    """Return ``X`` as a finite float64 array of shape ``(n, d)``.

    A 1-D input is read as ``n`` one-dimensional points.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array of points, got shape {X.shape}")
    if not allow_empty and X.shape[0] == 0:
        raise ValueError("at least one point is required")
    if dims is not None and X.shape[1] != dims:
        raise ValueError(f"expected {dims} columns, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return X


def check_sample_weight(sample_weight, n) -> np.ndarray:
    if sample_weight is None:
        return np.ones(n)
    w = np.asarray(sample_weight, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise ValueError("sample_weight length does not match the data")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("sample_weight must be finite, nonnegative, and not all zero")
    return w


def check_positive(name, value, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if not isinstance(value, kind) or isinstance(value, bool) or not value > 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return value


def check_target(target, dims=None, domain=None) -> LogTarget:
    """Coerce a callable or :class:`LogTarget` into a :class:`LogTarget`."""
    if isinstance(target, LogTarget):
        return target
    if not callable(target):
        raise TypeError("target must be a LogTarget or a callable log-density")
    if domain is None:
        if dims is None:
            raise ValueError("a bare callable target needs dims or a domain")
        domain = Domain.unbounded(dims)
    return LogTarget(target, domain)
