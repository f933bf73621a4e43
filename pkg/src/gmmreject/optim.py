"""Small optimizers shared by initialization and refinement."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .target import Domain


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax_weighted_max(alpha) -> float:
    """Smooth maximum ``<softmax(alpha), alpha>``."""
    alpha = np.asarray(alpha, dtype=float)
    p = softmax(alpha)
    # rounding can step outside [mean, max] by an ulp
    return float(np.clip(p @ alpha, alpha.mean(), alpha.max()))


@dataclass
class AdaBelief:
    """AdaBelief on a flat parameter vector.

    ``s`` tracks the EMA of ``(grad - m)**2`` rather than of ``grad**2``;
    updates are bias corrected. Non-finite gradients skip the step.
    """

    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-16
    t: int = 0
    m: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    skipped: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=float)
        if grad.shape != params.shape:
            raise ValueError("gradient shape does not match parameters")
        if not np.all(np.isfinite(grad)):
            self.skipped += 1
            return params
        if self.m is None:
            self.m = np.zeros_like(params)
            self.s = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        diff = grad - self.m
        self.s = self.beta2 * self.s + (1 - self.beta2) * diff * diff + self.eps
        m_hat = self.m / (1 - self.beta1 ** self.t)
        s_hat = self.s / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(s_hat) + self.eps)


def adabelief_step(state: AdaBelief, params, grad):
    new = state.step(np.asarray(params, dtype=float), grad)
    return state, new


@dataclass
class AccelResult:
    x: np.ndarray
    value: float
    n_evals: int
    failed: bool = False
    history: list = field(default_factory=list)


def accel_minimize(objective: Callable, x0, steps: int = 100, step_size: float = 0.05,
                   domain: Optional[Domain] = None, tol: float = 1e-8) -> AccelResult:
    """FISTA-style accelerated gradient descent returning the best iterate.

    ``objective(x)`` returns ``(value, grad)``; an infinite value or a raised
    ``ArithmeticError`` marks the point unusable. On an increase of the
    objective the momentum restarts and the step halves, which keeps a fixed
    initial step usable on badly scaled problems. Iterates are clamped into
    ``domain`` when one is given. Stops early once a step moves less than
    ``tol`` (relative).
    """
    x0 = np.asarray(x0, dtype=float).copy()
    clamp = (lambda z: domain.clip_interior(z)) if domain is not None else (lambda z: z)
    y = clamp(x0)
    x_prev = y.copy()
    t = 1.0
    best_x, best_v = x0, np.inf
    prev_v = np.inf
    n_evals = 0
    history = []
    lr = step_size
    for _ in range(steps):
        try:
            v, g = objective(y)
            n_evals += 1
            v = float(v)
            g = np.asarray(g, dtype=float)
            ok = np.isfinite(v) and np.all(np.isfinite(g))
        except ArithmeticError:
            n_evals += 1
            ok = False
        if not ok or v > prev_v:
            # restart from the best point with a smaller step
            if not np.isfinite(best_v):
                break
            lr *= 0.5
            t = 1.0
            y = best_x.copy()
            x_prev = best_x.copy()
            v, g = best_v, best_g
        history.append(v)
        if v < best_v:
            best_x, best_v, best_g = y.copy(), v, g
        prev_v = v
        x_new = clamp(y - lr * g)
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        moved = np.linalg.norm(x_new - x_prev)
        y = clamp(x_new + ((t - 1) / t_next) * (x_new - x_prev))
        x_prev = x_new
        t = t_next
        if moved <= tol * (1 + np.linalg.norm(x_new)) or lr < 1e-12:
            break
    if not np.isfinite(best_v):
        return AccelResult(x0, np.inf, n_evals, failed=True, history=history)
    return AccelResult(best_x, best_v, n_evals, history=history)
