"""Gradient refinement of a proposal against cached log-ratios.

The loss is the softmax-weighted maximum of ``alpha_i = log f(x_i) - log g(x_i)``
over the cached points, so lowering it lowers the rejection constant that
the cache implies. Only cached ``log f`` values are used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .optim import AdaBelief, softmax_weighted_max
from .proposal import GmmProposal, sigma_floor

CHECKPOINTS = (100, 200, 400, 800)


@dataclass
class RefineResult:
    proposal: GmmProposal
    achieved_log_ratio_max: float
    improved: bool
    checkpoint_chosen: Optional[int]
    initial_log_ratio_max: float

    def to_dict(self) -> dict:
        return {"checkpoint": self.checkpoint_chosen, "improved": self.improved,
                "before_log_ratio_max": self.initial_log_ratio_max,
                "after_log_ratio_max": self.achieved_log_ratio_max}


def log_ratios(g: GmmProposal, X, logf) -> np.ndarray:
    return np.asarray(logf, dtype=float) - g.log_density(X)


def max_log_ratio(g: GmmProposal, X, logf) -> float:
    a = log_ratios(g, X, logf)
    if np.isnan(a).any():
        return np.inf
    return float(np.max(a))


def ratio_loss(g: GmmProposal, X, logf) -> float:
    alpha = log_ratios(g, X, logf)
    if not np.all(np.isfinite(alpha)):
        return np.inf
    return softmax_weighted_max(alpha)


def _pack(g: GmmProposal) -> np.ndarray:
    return np.concatenate([g.means.ravel(), g.log_sigmas.ravel(), g.weight_logits])


def _unpack(theta, g: GmmProposal, log_floor) -> GmmProposal:
    """Rebuild a proposal from packed parameters, flooring the scales in place."""
    K, d = g.means.shape
    ls = theta[K * d:2 * K * d].reshape(K, d)
    np.maximum(ls, log_floor, out=ls)
    return GmmProposal(theta[:K * d].reshape(K, d), ls, theta[2 * K * d:], g.domain)


def loss_and_grad(g: GmmProposal, X, logf):
    """Ratio loss and its gradient in packed ``(means, log_sigmas, logits)`` order."""
    box = {}

    def weights(log_g):
        alpha = logf - log_g
        p = np.exp(alpha - alpha.max())
        p /= p.sum()
        loss = float(p @ alpha)
        box["loss"] = loss
        box["alpha"] = alpha
        # d loss / d alpha_n
        return p * (1.0 + alpha - loss)

    _, (g_mu, g_ls, g_w) = g.log_density_with_grad(X, weights)
    # alpha = log f - log g, so the loss gradient flips sign
    grad = -np.concatenate([g_mu.ravel(), g_ls.ravel(), g_w])
    return box["loss"], grad, box["alpha"]


def refine(g0: GmmProposal, X, logf, c_hat_log: float, steps: int = 800,
           checkpoints=CHECKPOINTS, lr: float = 0.1) -> RefineResult:
    """Run AdaBelief on the ratio loss, keeping the best checkpoint.

    The exact cache maximum of the log-ratio is evaluated at each
    checkpoint; the lowest wins. The result counts as improved only if
    it is no worse than both ``c_hat_log`` and ``g0`` itself, otherwise
    ``g0`` comes back unchanged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    logf = np.asarray(logf, dtype=float)
    keep = np.isfinite(logf)
    X, logf = X[keep], logf[keep]
    if X.shape[0] == 0:
        raise ValueError("refinement needs at least one cached point with finite log f")
    base = max_log_ratio(g0, X, logf)
    not_improved = RefineResult(g0, base, False, None, base)
    if not np.isfinite(base):
        return not_improved

    log_floor = np.log(sigma_floor(g0.domain))[None, :]
    theta = _pack(g0)
    opt = AdaBelief(lr=lr)
    g = g0
    best = (np.inf, None, None)
    marks = set(int(c) for c in checkpoints if c <= steps)
    for step in range(1, steps + 1):
        loss, grad, _ = loss_and_grad(g, X, logf)
        if step == 1 and not np.isfinite(loss):
            return not_improved
        theta = opt.step(theta, grad)
        try:
            g = _unpack(theta, g0, log_floor)
        except ValueError:
            break
        if step in marks:
            m = max_log_ratio(g, X, logf)
            if m < best[0]:
                best = (m, g, step)
    best_max, best_g, best_step = best
    if best_g is None or best_max > base or best_max > c_hat_log:
        return not_improved
    return RefineResult(best_g, best_max, True, best_step, base)
