"""Construction of the first proposal from a handful of target evaluations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import accel_minimize
from .proposal import GmmProposal, sigma_floor
from .target import GradientError, LogTarget


class InitializationError(RuntimeError):
    pass


@dataclass
class InitConfig:
    eps: float = 1e-3
    mode_steps: int = 100
    mode_step_size: float = 0.05
    spread_steps: int = 100
    spread_step_size: float = 0.05
    level_drop: float = 5.0
    max_zero_draws: int = 10_000


@dataclass
class InitReport:
    f_evals_used: int = 0
    modal: str = "compact-shortcut"
    modes_found: list = field(default_factory=list)
    K: int = 1

    def to_dict(self) -> dict:
        return {"f_evals_used": self.f_evals_used, "modal": self.modal,
                "modes_found": [np.asarray(m).tolist() for m in self.modes_found],
                "K": self.K}


class _Counted:
    """Wraps a target so every value or gradient evaluation at a point counts once."""

    def __init__(self, target: LogTarget):
        self.target = target
        self.n = 0

    def logf(self, x) -> float:
        self.n += 1
        return float(self.target.evaluate(np.asarray(x)[None, :])[0])

    def value_and_grad(self, x):
        self.n += 1
        v = float(self.target.evaluate(np.asarray(x)[None, :])[0])
        if not np.isfinite(v):
            return v, np.zeros_like(x)
        return v, self.target.gradient(x)


def k_farthest_select(points, eps: float) -> np.ndarray:
    """Greedy max-min selection starting from the farthest pair.

    Adds the point farthest from the selected set until that distance
    drops below ``eps``. Returns indices in selection order.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] < 2:
        raise ValueError("need at least two points")
    D = np.linalg.norm(P[:, None, :] - P[None], axis=2)
    i, j = np.unravel_index(np.argmax(D), D.shape)
    if D[i, j] < eps:
        return np.array([i])
    chosen = [int(i), int(j)]
    dist = np.minimum(D[i], D[j])
    while len(chosen) < P.shape[0]:
        k = int(np.argmax(dist))
        if dist[k] < eps:
            break
        chosen.append(k)
        dist = np.minimum(dist, D[k])
    return np.array(chosen)


def estimate_spread_cov(target, mode, rng, config: InitConfig | None = None, counter=None):
    """Diagonal covariance from points on the ``log f(mode) - 5`` level set.

    Perturbations of the mode are pushed onto the level set by minimizing
    ``(log f(x) - (log f(mode) - 5))**2``; the returned variances are the
    mean squared offsets of the surviving points from the mode.
    """
    config = config or InitConfig()
    counter = counter or _Counted(target)
    d = target.dims
    mode = np.asarray(mode, dtype=float)
    level = counter.logf(mode) - config.level_drop
    if not np.isfinite(level):
        raise InitializationError("log f is not finite at the mode")

    def objective(x):
        v, g = counter.value_and_grad(x)
        if not np.isfinite(v):
            return np.inf, g
        res = v - level
        return res * res, 2.0 * res * g

    starts = target.domain.clip_interior(mode + rng.standard_normal((2 * d + 10, d)))
    found = []
    for x0 in starts:
        res = accel_minimize(objective, x0, config.spread_steps, config.spread_step_size,
                             domain=target.domain)
        if not res.failed:
            found.append(res.x)
    floor = sigma_floor(target.domain) ** 2
    if len(found) < d + 2:
        return np.ones(d), counter.n
    spread = np.array(found)
    var = np.mean((spread - mode) ** 2, axis=0)
    return np.maximum(var, floor), counter.n


def initialize(target: LogTarget, rng, config: InitConfig | None = None):
    """Build the first proposal and report how it was found."""
    config = config or InitConfig()
    dm = target.domain
    d = target.dims
    if dm.compact():
        prop = GmmProposal.from_moments(dm.center()[None], dm.range()[None] / 3, [1.0], dm)
        return prop, InitReport(0, "compact-shortcut", [dm.center()], 1)

    counter = _Counted(target)
    x = dm.clip_interior(np.zeros(d))
    tries = 0
    while not np.isfinite(counter.logf(x)):
        tries += 1
        if tries > config.max_zero_draws:
            raise InitializationError(
                f"{config.max_zero_draws} draws from N(0, I) all had zero density; "
                "supply a domain that covers the support")
        x = dm.clip_interior(rng.standard_normal(d))

    candidates = dm.clip_interior(x + rng.standard_normal((d + 3, d)))
    candidates = np.vstack([candidates, x[None]])

    def neg_logf(z):
        v, g = counter.value_and_grad(z)
        return -v, -g

    modes, heights = [], []
    for c in candidates:
        try:
            res = accel_minimize(neg_logf, c, config.mode_steps, config.mode_step_size, domain=dm)
        except GradientError:
            continue
        if not res.failed:
            modes.append(res.x)
            heights.append(-res.value)
    if not modes:
        modes, heights = [x], [0.0]
    # a start on a stationary point that is not a peak (the dip between two
    # modes) stays put; keep only points near the height of the best mode
    heights = np.array(heights)
    modes = np.array(modes)[heights >= heights.max() - config.level_drop]

    if modes.shape[0] < 2 or np.max(np.var(modes, axis=0)) < config.eps:
        mu = modes.mean(axis=0)
        var, _ = estimate_spread_cov(target, mu, rng, config, counter)
        prop = GmmProposal.from_moments(mu[None], np.sqrt(var)[None], [1.0], dm)
        return prop, InitReport(counter.n, "unimodal", list(modes), 1)

    idx = k_farthest_select(modes, config.eps)
    centers = modes[idx]
    K = len(idx)
    spread = np.max(np.linalg.norm(centers[:, None] - centers[None], axis=2))
    var = max(spread / K, float(np.max(sigma_floor(dm) ** 2)))
    sig = np.full((K, d), np.sqrt(var))
    prop = GmmProposal.from_moments(centers, sig, np.full(K, 1.0 / K), dm)
    return prop, InitReport(counter.n, "multimodal" if K > 1 else "unimodal", list(centers), K)
