"""Benchmark targets (peakiness, sinusoid, clutter) and grid oracle samplers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .target import Domain, LogTarget

LOG_2PI = np.log(2 * np.pi)
FAMILIES = ("peakiness", "sinusoid", "clutter")


class UnsupportedOracle(ValueError):
    pass


def clutter_centers(d: int = 1) -> np.ndarray:
    """Ten centers, five evenly spaced over [-5, -3] and five over [2, 4], repeated per coordinate."""
    c = np.concatenate([np.linspace(-5, -3, 5), np.linspace(2, 4, 5)])
    return np.repeat(c[:, None], d, axis=1)


def peakiness_log(a: float, x):
    """log of exp(-x) / (1 + x)**a; -inf for x <= 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        out = -x - a * np.log1p(np.maximum(x, 0.0))
    return np.where(x > 0, out, -np.inf)


def peakiness_grad(a: float, x):
    x = np.asarray(x, dtype=float)
    return -1.0 - a / (1.0 + x)


def sinusoid_log(x):
    """Sum over coordinates of log(1 + sin(4 pi x_i - pi/2)) on [0, 1]^d.

    ``x`` has shape (..., d).
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        terms = np.log(1.0 + np.sin(4 * np.pi * x - np.pi / 2))
    inside = np.all((x >= 0) & (x <= 1), axis=-1)
    return np.where(inside, np.sum(terms, axis=-1), -np.inf)


def sinusoid_grad(x):
    x = np.asarray(x, dtype=float)
    u = 4 * np.pi * x - np.pi / 2
    return 4 * np.pi * np.cos(u) / (1.0 + np.sin(u))


def _clutter_terms(x, r, centers):
    """Per-center log of r*phi(x - theta) and (1 - r)*phi(x/100)/100**d; shapes (n, N)."""
    x = np.atleast_2d(x)
    d = x.shape[1]
    sq = np.sum((x[:, None, :] - centers[None]) ** 2, axis=2)
    with np.errstate(divide="ignore"):
        log_r, log_1mr = np.log(r), np.log1p(-r)
    signal = log_r - 0.5 * d * LOG_2PI - 0.5 * sq
    broad = (log_1mr - 0.5 * d * LOG_2PI - 0.5 * np.sum(x * x, axis=1) / 100.0 ** 2
             - d * np.log(100.0))
    return signal, np.broadcast_to(broad[:, None], signal.shape)


def clutter_log(r: float, centers, x):
    """Sum over centers of log(r*phi_d(x - theta_i) + (1 - r)*phi_d(x/100)/100**d)."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    signal, broad = _clutter_terms(x.reshape(-1, centers.shape[1]), r, centers)
    out = np.sum(np.logaddexp(signal, broad), axis=1)
    return out[0] if single else out


def clutter_grad(r: float, centers, x):
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    X = np.atleast_2d(np.asarray(x, dtype=float))
    signal, broad = _clutter_terms(X, r, centers)
    s = np.exp(signal - np.logaddexp(signal, broad))     # share of the signal term
    g = (-(s[:, :, None] * (X[:, None, :] - centers[None])).sum(axis=1)
         - ((1 - s).sum(axis=1))[:, None] * X / 100.0 ** 2)
    return g


@dataclass(frozen=True)
class BenchSpec:
    family: str = "peakiness"
    a: float = 1.0
    d: int = 1
    r: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.family == "peakiness" and self.d != 1:
            raise ValueError("peakiness is one-dimensional")
        if not 0 <= self.r <= 1:
            raise ValueError("r must lie in [0, 1]")

    @property
    def domain(self) -> Domain:
        if self.family == "peakiness":
            return Domain(np.array([0.0]), np.array([np.inf]))
        if self.family == "sinusoid":
            return Domain.box(0.0, 1.0, dims=self.d)
        return Domain.unbounded(self.d)

    @property
    def label(self) -> str:
        if self.family == "peakiness":
            return f"peakiness(a={self.a:g})"
        if self.family == "sinusoid":
            return f"sinusoid(d={self.d})"
        return f"clutter(d={self.d},r={self.r:g})"

    def log_density(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.family == "peakiness":
            return peakiness_log(self.a, X[:, 0])
        if self.family == "sinusoid":
            return sinusoid_log(X)
        return clutter_log(self.r, clutter_centers(self.d), X)

    def gradient(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.family == "peakiness":
            return peakiness_grad(self.a, X)
        if self.family == "sinusoid":
            return sinusoid_grad(X)
        return clutter_grad(self.r, clutter_centers(self.d), X)

    def target(self) -> LogTarget:
        return LogTarget(self.log_density, self.domain, grad=self.gradient,
                         vectorized=True, name=self.label)

    def to_dict(self) -> dict:
        return {"family": self.family, "a": self.a, "d": self.d, "r": self.r}


# ---------------------------------------------------------------------------
# oracle samplers
# ---------------------------------------------------------------------------

GRID_1D = 2 ** 17
GRID_2D = 2048
_LOG_CUTOFF = 60.0   # ignore regions more than e^-60 below the peak


def _support_interval(logf, lower, upper):
    """Interval outside of which the 1-D density is below peak * e^-60."""
    lo = lower if np.isfinite(lower) else -1e3
    hi = upper if np.isfinite(upper) else 1e3
    lo = np.nextafter(lo, np.inf)
    for _ in range(2):
        grid = np.linspace(lo, hi, 2 ** 16)
        lf = logf(grid)
        keep = np.flatnonzero(lf > np.max(lf) - _LOG_CUTOFF)
        step = grid[1] - grid[0]
        lo = max(grid[keep[0]] - step, lo)
        hi = min(grid[keep[-1]] + step, hi)
    return lo, hi


def _inverse_cdf_1d(logf, lower, upper, n, rng, size=GRID_1D):
    lo, hi = _support_interval(logf, lower, upper)
    grid = np.linspace(lo, hi, size)
    lf = logf(grid)
    dens = np.exp(lf - np.max(lf))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    return np.interp(rng.random(n), cdf, grid)


def oracle_sample(spec: BenchSpec, n: int, rng) -> np.ndarray:
    """Exact-up-to-grid samples from a benchmark density, shape (n, d)."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if spec.family == "sinusoid":
        # the density is a product over coordinates
        one = lambda t: sinusoid_log(t[:, None])
        return np.column_stack([_inverse_cdf_1d(one, 0.0, 1.0, n, rng) for _ in range(spec.d)])
    if spec.d == 1:
        dm = spec.domain
        logf = lambda t: spec.log_density(t[:, None])
        return _inverse_cdf_1d(logf, dm.lower[0], dm.upper[0], n, rng)[:, None]
    if spec.family == "clutter" and spec.d == 2:
        return _grid_2d(spec, n, rng)
    raise UnsupportedOracle(f"no oracle sampler for {spec.label}")


def _grid_2d(spec, n, rng, size=GRID_2D):
    # the clutter peaks sit on the diagonal; find the extent from the 1-D marginal slice
    lo, hi = _support_interval(lambda t: spec.log_density(np.column_stack([t, t])), -np.inf, np.inf)
    lo, hi = min(lo, -12.0), max(hi, 12.0)
    edges = np.linspace(lo, hi, size + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    h = edges[1] - edges[0]
    lf = np.empty((size, size))
    for i in range(0, size, 256):
        xx, yy = np.meshgrid(mids[i:i + 256], mids, indexing="ij")
        lf[i:i + 256] = spec.log_density(np.column_stack([xx.ravel(), yy.ravel()])).reshape(xx.shape)
    p = np.exp(lf - logsumexp(lf)).ravel()
    cdf = np.cumsum(p)
    cells = np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), p.size - 1)
    ix, iy = np.divmod(cells, size)
    jitter = rng.random((n, 2)) * h
    return np.column_stack([edges[ix], edges[iy]]) + jitter
