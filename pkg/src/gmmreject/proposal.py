"""Truncated diagonal-covariance Gaussian mixtures used as proposals.

:class:`GmmProposal` is the immutable parameter value (means, log standard
deviations, weight logits, domain). Each component is a product of
per-dimension normals truncated to the domain and renormalized, so
:meth:`GmmProposal.log_density` is exactly the density that
:meth:`GmmProposal.sample` draws from.

:class:`TruncatedGaussianMixture` wraps weighted EM with k-means++ seeding
in a scikit-learn estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from . import _kernels, truncnorm
from .target import Domain
from .validation import check_points, check_sample_weight

SIGMA_FLOOR_FRACTION = 1e-4
WEIGHT_FLOOR = 1e-6
# route density and gradient passes through the compiled kernels when present
USE_KERNELS = _kernels.AVAILABLE


def _lse_cols(a):
    """Log-sum-exp down the columns of a (K, n) array.

    Returns ``(lse, exp(a - colmax), colsum)``; a lean replacement for
    scipy's logsumexp on the hot refinement path.
    """
    m = a.max(axis=0)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a - m)
    s = e.sum(axis=0)
    with np.errstate(divide="ignore"):
        return m + np.log(s), e, s


@dataclass(frozen=True, eq=False)
class GmmProposal:
    means: np.ndarray        # (K, d)
    log_sigmas: np.ndarray   # (K, d)
    weight_logits: np.ndarray  # (K,)
    domain: Domain

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float)).copy()
        log_sigmas = np.atleast_2d(np.asarray(self.log_sigmas, dtype=float)).copy()
        logits = np.atleast_1d(np.asarray(self.weight_logits, dtype=float)).copy()
        K, d = means.shape
        if log_sigmas.shape != (K, d) or logits.shape != (K,):
            raise ValueError("inconsistent parameter shapes")
        if d != self.domain.dims:
            raise ValueError("means do not match the domain dimension")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(log_sigmas))
                and np.all(np.isfinite(logits))):
            raise ValueError("proposal parameters must be finite")
        # canonical logits: log of normalized weights
        top = logits.max()
        logits = logits - (top + np.log(np.sum(np.exp(logits - top))))
        for arr in (means, log_sigmas, logits):
            arr.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "log_sigmas", log_sigmas)
        object.__setattr__(self, "weight_logits", logits)

    @classmethod
    def from_moments(cls, means, sigmas, weights, domain: Domain) -> "GmmProposal":
        weights = np.asarray(weights, dtype=float)
        return cls(np.asarray(means, dtype=float),
                   np.log(np.asarray(sigmas, dtype=float)),
                   np.log(weights / weights.sum()), domain)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dims(self) -> int:
        return self.means.shape[1]

    @property
    def sigmas(self) -> np.ndarray:
        return np.exp(self.log_sigmas)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.weight_logits)

    def replace(self, means=None, log_sigmas=None, weight_logits=None) -> "GmmProposal":
        return GmmProposal(self.means if means is None else means,
                           self.log_sigmas if log_sigmas is None else log_sigmas,
                           self.weight_logits if weight_logits is None else weight_logits,
                           self.domain)

    # -- truncation ---------------------------------------------------------
    def _std_bounds(self):
        sig = self.sigmas
        alpha = (self.domain.lower - self.means) / sig
        beta = (self.domain.upper - self.means) / sig
        return alpha, beta

    def log_truncation_mass(self) -> np.ndarray:
        """log Z for every component and dimension, shape (K, d)."""
        return truncnorm.log_mass(*self._std_bounds())

    # -- density ------------------------------------------------------------
    # Internals use a component-major layout: joint is (K, n), z is (d, K, n).
    def _component_constants(self):
        """Per-component log weight minus normalizers, and the truncation masses."""
        lz = self.log_truncation_mass()
        const = (self.weight_logits - np.sum(self.log_sigmas + lz, axis=1)
                 - self.dims * truncnorm.LOG_SQRT_2PI)
        return const, lz

    def _component_log_density(self, X):
        Xt = np.ascontiguousarray(X.T)                       # (d, n)
        z = (Xt[:, None, :] - self.means.T[:, :, None]) / self.sigmas.T[:, :, None]
        const, lz = self._component_constants()
        sq = z[0] * z[0]
        for i in range(1, self.dims):
            sq += z[i] * z[i]
        return const[:, None] - 0.5 * sq, z, lz

    def _mixture_log_density(self, X):
        """log g for in-domain rows, no domain check."""
        if USE_KERNELS:
            const, _ = self._component_constants()
            return _kernels.mixture_logpdf(np.ascontiguousarray(X, dtype=float), self.means,
                                           np.exp(-self.log_sigmas), const)[0]
        joint, _, _ = self._component_log_density(X)
        return _lse_cols(joint)[0]

    def log_density(self, X) -> np.ndarray:
        """log g at each row of ``X``; ``-inf`` outside the domain."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], -np.inf)
        inside = self.domain.contains(X)
        if inside.all():
            return self._mixture_log_density(X)
        if inside.any():
            out[inside] = self._mixture_log_density(X[inside])
        return out

    def responsibilities(self, X) -> np.ndarray:
        """Posterior component probabilities, shape (n, K)."""
        joint, _, _ = self._component_log_density(np.atleast_2d(X))
        _, e, s = _lse_cols(joint)
        return (e / s).T

    # -- sampling -----------------------------------------------------------
    def sample(self, rng, m: int, return_degenerate: bool = False):
        """Draw ``m`` points strictly inside the domain.

        Component by categorical choice over the weights, then each
        coordinate by inverse-CDF truncated normal sampling.
        """
        if m < 1:
            raise ValueError("m must be >= 1")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        comp = rng.choice(self.n_components, size=m, p=self.weights)
        u = rng.random((m, self.dims))
        alpha, beta = self._std_bounds()
        z, degenerate = truncnorm.sample(alpha[comp], beta[comp], u)
        X = self.means[comp] + self.sigmas[comp] * z
        lo = np.nextafter(self.domain.lower, np.inf)
        hi = np.nextafter(self.domain.upper, -np.inf)
        X = np.clip(X, lo, hi)
        if return_degenerate:
            return X, int(np.count_nonzero(degenerate))
        return X

    # -- parameter gradients ------------------------------------------------
    def weighted_param_grad(self, X, c):
        """``sum_n c[n] * d log g(X[n]) / d theta``.

        Returns gradients for (means, log_sigmas, weight_logits), including
        the dependence of the truncation masses on means and scales.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.log_density_with_grad(X, lambda _: np.asarray(c, dtype=float))[1]

    def log_density_with_grad(self, X, weight_fn):
        """Evaluate log g on in-domain ``X`` and a weighted parameter gradient.

        ``weight_fn(log_g)`` returns the per-point weights ``c``; the result is
        ``(log_g, (g_mu, g_log_sigma, g_logits))`` as in
        :meth:`weighted_param_grad`. Shares one pass over the components.
        """
        if USE_KERNELS:
            X = np.ascontiguousarray(X, dtype=float)
            const, lz = self._component_constants()
            inv_sig = np.exp(-self.log_sigmas)
            lse, resp = _kernels.mixture_logpdf(X, self.means, inv_sig, const)
            c = np.ascontiguousarray(weight_fn(lse), dtype=float)
            s0, s1, s2 = _kernels.mixture_weighted_moments(X, self.means, inv_sig, resp, c)
            return lse, self._grad_from_moments(s0, s1, s2, lz, c.sum())
        joint, z, lz = self._component_log_density(X)
        lse, e, s = _lse_cols(joint)
        c = weight_fn(lse)
        cr = (e / s) * c                       # (K, n)
        crz = cr[None] * z                     # (d, K, n)
        return lse, self._grad_from_moments(cr.sum(axis=1), crz.sum(axis=2).T,
                                            (crz * z).sum(axis=2).T, lz, c.sum())

    def _grad_from_moments(self, s0, s1, s2, lz, c_total):
        """Assemble gradients from responsibility-weighted moments.

        ``s0[k] = sum c r``, ``s1[k] = sum c r z`` and ``s2[k] = sum c r z**2``.
        """
        alpha, beta = self._std_bounds()
        da, db = truncnorm.dlog_mass(alpha, beta, lz)
        sig = self.sigmas
        # d logZ / d mu = -(da + db)/sigma ; d logZ / d log sigma = -(alpha da + beta db)
        dlz_dmu = -(da + db) / sig
        a_term = np.where(np.isfinite(alpha), alpha, 0.0) * da
        b_term = np.where(np.isfinite(beta), beta, 0.0) * db
        dlz_dls = -(a_term + b_term)
        g_mu = s1 / sig - s0[:, None] * dlz_dmu
        g_ls = s2 - s0[:, None] * (1.0 + dlz_dls)
        g_w = s0 - c_total * self.weights
        return g_mu, g_ls, g_w

    def param_grad(self, x):
        return self.weighted_param_grad(np.atleast_2d(x), np.ones(1))

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "sigmas": self.sigmas.tolist(),
                "weights": self.weights.tolist(), "domain": self.domain.to_dict()}

    @classmethod
    def from_dict(cls, obj: dict) -> "GmmProposal":
        return cls.from_moments(obj["means"], obj["sigmas"], obj["weights"],
                                Domain.from_dict(obj["domain"]))


def gmm_log_density(g: GmmProposal, x):
    return g.log_density(x)


def gmm_sample(g: GmmProposal, rng, m: int):
    return g.sample(rng, m)


def gmm_param_grad(g: GmmProposal, x):
    return g.param_grad(x)


def sigma_floor(domain: Domain) -> np.ndarray:
    return SIGMA_FLOOR_FRACTION * domain.scale()


# ---------------------------------------------------------------------------
# weighted EM
# ---------------------------------------------------------------------------

def kmeans_plusplus(X, weights, K, rng):
    """Weighted k-means++ seeding; returns indices of the chosen centers."""
    n = X.shape[0]
    p = weights / weights.sum()
    idx = [int(rng.choice(n, p=p))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, K):
        score = weights * d2
        total = score.sum()
        if total <= 0:
            break
        nxt = int(rng.choice(n, p=score / total))
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return np.array(idx)


def _diag_log_joint(X, means, variances, log_w):
    diff = X[:, None, :] - means[None]
    return (log_w[None]
            - 0.5 * np.sum(diff * diff / variances[None], axis=2)
            - 0.5 * np.sum(np.log(2 * np.pi * variances), axis=1)[None])


def _m_step(X, w, resp, var_floor):
    nk = resp.T @ w                           # (K,)
    rw = resp * w[:, None]
    means = (rw.T @ X) / nk[:, None]
    ex2 = (rw.T @ (X * X)) / nk[:, None]
    variances = np.maximum(ex2 - means * means, var_floor)
    mix = np.maximum(nk / nk.sum(), WEIGHT_FLOOR)
    return means, variances, mix / mix.sum(), nk


def fit_em(X, weights, K, rng, domain: Domain | None = None, max_iter=100, tol=1e-6):
    """Weighted EM for a diagonal Gaussian mixture.

    The likelihood maximized is the untruncated mixture's; the result is
    returned as a truncated :class:`GmmProposal` on ``domain``. Returns the
    proposal and the per-iteration weighted log-likelihood trace.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(weights, dtype=float)
    n, d = X.shape
    if domain is None:
        domain = Domain.unbounded(d)
    if K < 1 or n < K:
        raise ValueError("need at least K points")
    pos = w > 0
    if np.unique(X[pos], axis=0).shape[0] < K:
        raise ValueError("need at least K distinct points with positive weight")
    w = w / w.sum()
    var_floor = sigma_floor(domain) ** 2

    centers = kmeans_plusplus(X, w, K, rng)
    d2 = np.sum((X[:, None, :] - X[centers][None]) ** 2, axis=2)
    resp = np.zeros((n, K))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    means, variances, mix, nk = _m_step(X, w, resp, var_floor)
    means[nk <= 0] = X[centers][nk <= 0]

    trace = []
    for _ in range(max_iter):
        joint = _diag_log_joint(X, means, variances, np.log(mix))
        lse = logsumexp(joint, axis=1)
        ll = float(w @ lse)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * abs(trace[-2]):
            break
        resp = np.exp(joint - lse[:, None])
        nk = resp.T @ w
        empty = nk < 1e-12
        if empty.any():
            # re-seed at the heavy points the mixture explains worst
            badness = np.log(np.where(pos, w, 1e-300)) - lse
            order = np.argsort(-badness)
            for k, j in zip(np.flatnonzero(empty), order):
                resp[:, k] = 0.0
                resp[j] = 0.0
                resp[j, k] = 1.0
        means, variances, mix, _ = _m_step(X, w, resp, var_floor)
    proposal = GmmProposal(means, 0.5 * np.log(variances), np.log(mix), domain)
    return proposal, trace


def gmm_fit_em(data, weights, K, rng, domain=None):
    return fit_em(data, weights, K, rng, domain)[0]


class TruncatedGaussianMixture(DensityMixin, BaseEstimator):
    """Diagonal Gaussian mixture fit by weighted EM, evaluated truncated to a box.

    Parameters
    ----------
    n_components : int
    lower, upper : array-like or None
        Domain bounds; ``None`` means unbounded in every dimension.
    max_iter : int
    tol : float
        Relative log-likelihood change that stops EM.
    random_state : int, Generator or None
    """

    def __init__(self, n_components=1, lower=None, upper=None, max_iter=100,
                 tol=1e-6, random_state=None):
        self.n_components = n_components
        self.lower = lower
        self.upper = upper
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _domain(self, d):
        lower = np.full(d, -np.inf) if self.lower is None else self.lower
        upper = np.full(d, np.inf) if self.upper is None else self.upper
        return Domain.box(lower, upper, dims=d)

    def fit(self, X, y=None, sample_weight=None):
        X = check_points(X)
        w = check_sample_weight(sample_weight, X.shape[0])
        rng = _as_generator(self.random_state)
        self.proposal_, self.log_likelihood_trace_ = fit_em(
            X, w, self.n_components, rng, self._domain(X.shape[1]),
            max_iter=self.max_iter, tol=self.tol)
        self.n_iter_ = len(self.log_likelihood_trace_)
        self.means_ = self.proposal_.means
        self.sigmas_ = self.proposal_.sigmas
        self.weights_ = self.proposal_.weights
        return self

    def score_samples(self, X):
        check_is_fitted(self, "proposal_")
        return self.proposal_.log_density(check_points(X, dims=self.proposal_.dims))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1):
        check_is_fitted(self, "proposal_")
        return self.proposal_.sample(_as_generator(self.random_state), n_samples)


def _as_generator(random_state) -> np.random.Generator:
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, (int, np.integer)):
        return np.random.default_rng(random_state)
    # legacy RandomState: derive a seed from it
    return np.random.default_rng(check_random_state(random_state).randint(2**31))
