"""Two-sample goodness-of-fit tests: Kolmogorov-Smirnov and Cramer (energy)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import kolmogorov

KS_MIN_SIZE = 25
CRAMER_MIN_SIZE = 50
CRAMER_MIN_PERMUTATIONS = 200
CRAMER_MAX_POINTS = 5000


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    n1: int
    n2: int

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value,
                "method": self.method, "n1": self.n1, "n2": self.n2}


def ks_statistic(x, y) -> float:
    """sup |F_x - F_y| evaluated by merging the sorted samples."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    y = np.sort(np.asarray(y, dtype=float).ravel())
    pooled = np.concatenate([x, y])
    # right-continuous ECDFs: all tied values step together
    fx = np.searchsorted(x, pooled, side="right") / x.size
    fy = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def ks_two_sample(x, y) -> TestResult:
    """Two-sample KS test with the asymptotic Kolmogorov p-value."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n1, n2 = x.size, y.size
    if min(n1, n2) < KS_MIN_SIZE:
        raise ValueError(f"KS asymptotics need at least {KS_MIN_SIZE} points per sample")
    D = ks_statistic(x, y)
    en = n1 * n2 / (n1 + n2)
    p = float(np.clip(kolmogorov(np.sqrt(en) * D), 0.0, 1.0))
    return TestResult(D, p, "ks-asymptotic", n1, n2)


def _pairwise_block_sums(P, labels, block=1024):
    """Row sums of the distance matrix and ``D @ labels`` without storing ``D``."""
    n = P.shape[0]
    row = np.empty(n)
    DL = np.empty((n, labels.shape[1]))
    for s in range(0, n, block):
        D = cdist(P[s:s + block], P)
        row[s:s + block] = D.sum(axis=1)
        DL[s:s + block] = D @ labels
    return row, DL


def _distance_sum(A, B, block=1024):
    return sum(float(cdist(A[s:s + block], B).sum()) for s in range(0, A.shape[0], block))


def cramer_statistic(X, Y) -> float:
    """n1 n2/(n1+n2) * (mean |X-Y| - mean |X-X'|/2 - mean |Y-Y'|/2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n1, n2 = X.shape[0], Y.shape[0]
    # three direct sums, so Y == X gives exactly zero
    inner = (_distance_sum(X, Y) / (n1 * n2) - 0.5 * _distance_sum(X, X) / n1 ** 2
             - 0.5 * _distance_sum(Y, Y) / n2 ** 2)
    return float(max(n1 * n2 / (n1 + n2) * inner, 0.0))


def _stat_from_sums(total, lx_row, s_xx, n1, n2):
    # s_xy = l.row - s_xx ; s_yy = total - 2 l.row + s_xx (ordered pairs)
    s_xy = lx_row - s_xx
    s_yy = total - 2.0 * lx_row + s_xx
    inner = s_xy / (n1 * n2) - 0.5 * s_xx / n1 ** 2 - 0.5 * s_yy / n2 ** 2
    return float(max(n1 * n2 / (n1 + n2) * inner, 0.0))


def cramer_two_sample(X, Y, B: int = CRAMER_MIN_PERMUTATIONS, rng=None,
                      max_points: int = CRAMER_MAX_POINTS) -> TestResult:
    """Permutation Cramer test on Euclidean distances.

    Inputs larger than ``max_points`` are subsampled (seeded by ``rng``).
    The smallest attainable p-value is ``1/(B+1)``.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("samples must share a dimension")
    if min(X.shape[0], Y.shape[0]) < CRAMER_MIN_SIZE:
        raise ValueError(f"need at least {CRAMER_MIN_SIZE} points per sample")
    if B < CRAMER_MIN_PERMUTATIONS:
        raise ValueError(f"need at least {CRAMER_MIN_PERMUTATIONS} permutations")
    if X.shape[0] > max_points:
        X = X[np.sort(rng.choice(X.shape[0], max_points, replace=False))]
    if Y.shape[0] > max_points:
        Y = Y[np.sort(rng.choice(Y.shape[0], max_points, replace=False))]
    n1, n2 = X.shape[0], Y.shape[0]
    n = n1 + n2
    P = np.vstack([X, Y])
    labels = np.zeros((n, B + 1))
    labels[:n1, 0] = 1.0
    for b in range(1, B + 1):
        labels[rng.permutation(n)[:n1], b] = 1.0
    row, DL = _pairwise_block_sums(P, labels)
    total = row.sum()
    lx_row = labels.T @ row
    s_xx = np.einsum("nb,nb->b", labels, DL)
    stats = np.array([_stat_from_sums(total, lx_row[b], s_xx[b], n1, n2) for b in range(B + 1)])
    observed = cramer_statistic(X, Y)
    # ties within rounding of the observed value count as at least as extreme
    tol = 1e-9 * max(abs(observed), 1e-12 * total / n)
    p = (1 + np.count_nonzero(stats[1:] >= observed - tol)) / (B + 1)
    return TestResult(observed, float(p), "cramer-permutation", n1, n2)


def two_sample_test(X, Y, rng=None, B: int = CRAMER_MIN_PERMUTATIONS) -> TestResult:
    """KS for one-dimensional samples, Cramer otherwise."""
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    if X.shape[1] == 1:
        return ks_two_sample(X[:, 0], np.asarray(Y, dtype=float).ravel())
    return cramer_two_sample(X, Y, B=B, rng=rng)
