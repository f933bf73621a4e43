import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import assert_rel_close, central_difference
from gmmreject import proposal as P
from gmmreject import truncnorm
from gmmreject.proposal import (GmmProposal, TruncatedGaussianMixture, fit_em, gmm_fit_em,
                                gmm_log_density, gmm_param_grad, gmm_sample, kmeans_plusplus)
from gmmreject.target import Domain


def random_proposal(rng, K, dom):
    d = dom.dims
    lo = np.where(np.isfinite(dom.lower), dom.lower, -2.0)
    hi = np.where(np.isfinite(dom.upper), dom.upper, 2.0)
    means = lo + (hi - lo) * rng.random((K, d))
    sig = (hi - lo) * (0.05 + 0.5 * rng.random((K, d)))
    return GmmProposal.from_moments(means, sig, 0.2 + rng.random(K), dom)


def naive_log_density(g, x):
    """Double loop over components and dimensions with scipy's truncnorm."""
    total = 0.0
    for k in range(g.n_components):
        p = g.weights[k]
        for i in range(g.dims):
            mu, s = g.means[k, i], g.sigmas[k, i]
            lo, hi = g.domain.lower[i], g.domain.upper[i]
            p *= stats.truncnorm.pdf(x[i], (lo - mu) / s, (hi - mu) / s, loc=mu, scale=s)
        total += p
    return math.log(total)


# -- construction -----------------------------------------------------------

def test_parameters_are_validated_and_frozen():
    dom = Domain.unbounded(1)
    g = GmmProposal(np.zeros((1, 1)), np.zeros((1, 1)), np.array([3.0]), dom)
    assert g.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        g.means[0, 0] = 1.0
    with pytest.raises(ValueError):
        GmmProposal(np.array([[np.nan]]), np.zeros((1, 1)), np.zeros(1), dom)
    with pytest.raises(ValueError):
        GmmProposal(np.zeros((2, 1)), np.zeros((1, 1)), np.zeros(2), dom)


def test_serialization_roundtrip(rng):
    g = random_proposal(rng, 3, Domain.box(0.0, 1.0, dims=2))
    h = GmmProposal.from_dict(g.to_dict())
    np.testing.assert_allclose(h.means, g.means)
    np.testing.assert_allclose(h.sigmas, g.sigmas)
    np.testing.assert_allclose(h.weights, g.weights)


# -- density ----------------------------------------------------------------

def test_standard_normal_density():
    g = GmmProposal.from_moments([[0.0]], [[1.0]], [1.0], Domain.unbounded(1))
    assert gmm_log_density(g, [[0.0]])[0] == pytest.approx(-0.918938533204673, abs=1e-12)


def test_symmetric_pair_density():
    g = GmmProposal.from_moments([[-1.0], [1.0]], [[1.0], [1.0]], [1, 1], Domain.unbounded(1))
    assert gmm_log_density(g, [[0.0]])[0] == pytest.approx(-1.418938533204673, abs=1e-12)


@pytest.mark.parametrize("use_kernels", [True, False])
def test_density_matches_naive_summation(rng, monkeypatch, use_kernels):
    monkeypatch.setattr(P, "USE_KERNELS", use_kernels)
    g = random_proposal(rng, 3, Domain.box(0.0, 1.0, dims=2))
    X = rng.random((20, 2))
    got = g.log_density(X)
    for x, v in zip(X, got):
        assert v == pytest.approx(naive_log_density(g, x), rel=1e-10)


def test_kernel_and_numpy_paths_agree(rng, monkeypatch):
    dom = Domain(np.array([0.0, -np.inf]), np.array([np.inf, np.inf]))
    g = random_proposal(rng, 4, dom)
    X = np.abs(rng.normal(size=(300, 2)))
    c = rng.normal(size=300)
    monkeypatch.setattr(P, "USE_KERNELS", True)
    a_ld, a_gr = g.log_density(X), g.weighted_param_grad(X, c)
    monkeypatch.setattr(P, "USE_KERNELS", False)
    b_ld, b_gr = g.log_density(X), g.weighted_param_grad(X, c)
    np.testing.assert_allclose(a_ld, b_ld, rtol=1e-12)
    for a, b in zip(a_gr, b_gr):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_outside_domain_is_minus_inf():
    g = GmmProposal.from_moments([[0.5]], [[0.2]], [1], Domain.box(0.0, 1.0))
    assert np.all(g.log_density([[-0.1], [1.1]]) == -np.inf)


@pytest.mark.parametrize("dom", [Domain.box(0.0, 1.0), Domain(np.array([0.0]), np.array([np.inf])),
                                 Domain.unbounded(1)])
def test_density_integrates_to_one(rng, dom):
    g = random_proposal(rng, 3, dom)
    lo = dom.lower[0] if np.isfinite(dom.lower[0]) else -np.inf
    hi = dom.upper[0] if np.isfinite(dom.upper[0]) else np.inf
    f = lambda t: math.exp(g.log_density([[t]])[0])
    pts = sorted(float(m) for m in g.means[:, 0])
    if np.isfinite(lo) and np.isfinite(hi):
        val, _ = integrate.quad(f, lo, hi, points=pts, limit=200)
    else:
        mid = pts[0]
        val = integrate.quad(f, lo, mid, limit=200)[0] + integrate.quad(f, mid, hi, limit=200)[0]
    assert val == pytest.approx(1.0, abs=1e-3)


# -- sampling ---------------------------------------------------------------

def test_wide_component_on_unit_interval_has_mean_half():
    g = GmmProposal.from_moments([[0.5]], [[100.0]], [1], Domain.box(0.0, 1.0))
    X = gmm_sample(g, np.random.default_rng(1), 100_000)
    se = X.std() / math.sqrt(X.shape[0])
    assert abs(X.mean() - 0.5) < 3 * se


def test_half_normal_mean():
    g = GmmProposal.from_moments([[0.0]], [[1.0]], [1], Domain(np.array([0.0]), np.array([np.inf])))
    X = gmm_sample(g, np.random.default_rng(2), 100_000)
    se = X.std() / math.sqrt(X.shape[0])
    assert abs(X.mean() - math.sqrt(2 / math.pi)) < 3 * se
    assert np.all(X > 0)


@pytest.mark.parametrize("seed", range(4))
def test_single_component_marginals_pass_ks(seed):
    rng = np.random.default_rng(seed)
    dom = Domain(np.array([0.0, -1.0]), np.array([np.inf, 2.0]))
    g = GmmProposal.from_moments(rng.normal(size=(1, 2)), 0.3 + rng.random((1, 2)), [1], dom)
    X = g.sample(rng, 100_000)
    a, b = g._std_bounds()
    for i in range(2):
        z = (X[:, i] - g.means[0, i]) / g.sigmas[0, i]
        assert stats.kstest(z, lambda t: truncnorm.cdf(t, a[0, i], b[0, i])).pvalue > 0.01


def test_mixture_sample_matches_density_cdf():
    rng = np.random.default_rng(5)
    dom = Domain.box(-1.0, 3.0)
    g = GmmProposal.from_moments([[0.0], [2.0]], [[0.3], [1.0]], [0.3, 0.7], dom)
    X = g.sample(rng, 50_000)[:, 0]
    a, b = g._std_bounds()

    def cdf(t):
        out = 0.0
        for k in range(2):
            z = (t - g.means[k, 0]) / g.sigmas[k, 0]
            out = out + g.weights[k] * truncnorm.cdf(z, a[k, 0], b[k, 0])
        return out

    assert stats.kstest(X, cdf).pvalue > 0.01


def test_sampling_is_seeded():
    g = GmmProposal.from_moments([[0.0]], [[1.0]], [1], Domain.unbounded(1))
    np.testing.assert_array_equal(g.sample(np.random.default_rng(3), 10),
                                  g.sample(np.random.default_rng(3), 10))


# -- gradients --------------------------------------------------------------

def _as_fn(g, x, which):
    K, d = g.means.shape

    def fn(v):
        parts = {"means": g.means, "log_sigmas": g.log_sigmas, "weight_logits": g.weight_logits}
        parts = {k: np.array(p) for k, p in parts.items()}
        parts[which] = v.reshape(parts[which].shape)
        return GmmProposal(parts["means"], parts["log_sigmas"], parts["weight_logits"],
                           g.domain).log_density(x[None, :])[0]

    return fn


def test_standard_normal_score():
    g = GmmProposal.from_moments([[0.0]], [[1.0]], [1], Domain.unbounded(1))
    g_mu, g_ls, g_w = gmm_param_grad(g, [2.0])
    assert g_mu[0, 0] == pytest.approx(2.0)
    assert g_ls[0, 0] == pytest.approx(3.0)
    assert g_w[0] == pytest.approx(0.0, abs=1e-15)


def test_logit_gradient_sums_to_zero(rng):
    g = random_proposal(rng, 4, Domain.box(0.0, 1.0, dims=2))
    for x in rng.random((5, 2)):
        assert gmm_param_grad(g, x)[2].sum() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("which,idx", [("means", 0), ("log_sigmas", 1), ("weight_logits", 2)])
def test_truncated_gradient_matches_finite_differences(rng, which, idx):
    g = random_proposal(rng, 3, Domain.box(0.0, 1.0))
    # include points near both boundaries
    X = np.concatenate([rng.random(8), [1e-3, 1 - 1e-3]])
    for x in X:
        x = np.array([x])
        fd = central_difference(_as_fn(g, x, which), getattr(g, which).ravel().copy(), h=1e-6)
        got = gmm_param_grad(g, x)[idx].ravel()
        assert_rel_close(got, fd, 1e-5, floor=1e-4)


def test_half_bounded_multivariate_gradient(rng):
    dom = Domain(np.array([0.0, -np.inf]), np.array([np.inf, np.inf]))
    g = random_proposal(rng, 2, dom)
    x = np.array([0.4, -0.3])
    for which, idx in [("means", 0), ("log_sigmas", 1), ("weight_logits", 2)]:
        fd = central_difference(_as_fn(g, x, which), getattr(g, which).ravel().copy(), h=1e-6)
        assert_rel_close(gmm_param_grad(g, x)[idx].ravel(), fd, 1e-5, floor=1e-4)


# -- EM ---------------------------------------------------------------------

def test_em_recovers_cluster_centroids():
    rng = np.random.default_rng(0)
    a = np.array([[0.0, 0.0]]) + 1e-3 * rng.normal(size=(2, 2))
    b = np.array([[10.0, 10.0]]) + 1e-3 * rng.normal(size=(2, 2))
    X = np.vstack([a, b])
    g, _ = fit_em(X, np.ones(4), 2, rng)
    got = g.means[np.argsort(g.means[:, 0])]
    np.testing.assert_allclose(got, [a.mean(axis=0), b.mean(axis=0)], atol=1e-3)


def test_em_single_component_closed_form(rng):
    X = rng.normal(size=(200, 2)) * [1.0, 3.0] + [2.0, -1.0]
    w = rng.random(200)
    g, _ = fit_em(X, w, 1, rng)
    wn = w / w.sum()
    mean = wn @ X
    var = wn @ (X - mean) ** 2
    np.testing.assert_allclose(g.means[0], mean, rtol=1e-12)
    np.testing.assert_allclose(g.sigmas[0] ** 2, var, rtol=1e-10)


def test_em_variance_floor():
    X = np.ones((10, 1))
    X[0] = 1.0 + 1e-12
    g, _ = fit_em(X, np.ones(10), 1, np.random.default_rng(0), Domain.box(0.0, 10.0))
    assert g.sigmas[0, 0] == pytest.approx(1e-4 * 10.0)


def _oracle_em(X, w, centers, n_iter, var_floor):
    """Plain-loop weighted EM from hard assignments to ``centers``."""
    n, d = X.shape
    K = len(centers)
    w = w / w.sum()
    resp = np.zeros((n, K))
    for i in range(n):
        dists = [sum((X[i, j] - X[c, j]) ** 2 for j in range(d)) for c in centers]
        resp[i, int(np.argmin(dists))] = 1.0

    def m_step(resp):
        means = np.zeros((K, d))
        var = np.zeros((K, d))
        mix = np.zeros(K)
        for k in range(K):
            nk = sum(resp[i, k] * w[i] for i in range(n))
            mix[k] = nk
            for j in range(d):
                m = sum(resp[i, k] * w[i] * X[i, j] for i in range(n)) / nk
                v = sum(resp[i, k] * w[i] * X[i, j] ** 2 for i in range(n)) / nk - m * m
                means[k, j], var[k, j] = m, max(v, var_floor[j])
        mix = np.maximum(mix / mix.sum(), 1e-6)
        return means, var, mix / mix.sum()

    means, var, mix = m_step(resp)
    for _ in range(n_iter):
        for i in range(n):
            logs = []
            for k in range(K):
                s = math.log(mix[k])
                for j in range(d):
                    s += -0.5 * (X[i, j] - means[k, j]) ** 2 / var[k, j] - 0.5 * math.log(2 * math.pi * var[k, j])
                logs.append(s)
            top = max(logs)
            tot = sum(math.exp(v - top) for v in logs)
            for k in range(K):
                resp[i, k] = math.exp(logs[k] - top) / tot
        means, var, mix = m_step(resp)
    return means, var, mix


def test_em_matches_plain_loop_oracle():
    rng = np.random.default_rng(11)
    X = np.vstack([rng.normal(-2, 0.5, size=(15, 2)), rng.normal(2, 1.0, size=(15, 2))])
    w = np.where(np.arange(30) % 3 == 0, 10.0, 1.0)
    seed_rng = np.random.default_rng(99)
    centers = kmeans_plusplus(X, w / w.sum(), 2, np.random.default_rng(99))
    g, trace = fit_em(X, w, 2, seed_rng, max_iter=15, tol=0.0)
    assert len(trace) == 15
    means, var, mix = _oracle_em(X, w, centers, 15, P.sigma_floor(Domain.unbounded(2)) ** 2)
    np.testing.assert_allclose(g.means, means, rtol=1e-8)
    np.testing.assert_allclose(g.sigmas ** 2, var, rtol=1e-8)
    np.testing.assert_allclose(g.weights, mix, rtol=1e-8)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_em_log_likelihood_monotone(seed, K):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(c, 1.0, size=(25, 2)) for c in (-3.0, 0.0, 4.0)])
    w = rng.random(75) * np.where(rng.random(75) < 0.3, 10.0, 1.0)
    _, trace = fit_em(X, w, K, rng, max_iter=60, tol=0.0)
    assert np.all(np.diff(trace) >= -1e-9)


def test_em_refuses_too_few_distinct_points():
    with pytest.raises(ValueError):
        fit_em(np.ones((5, 1)), np.ones(5), 2, np.random.default_rng(0))


def test_weighted_kmeanspp_ignores_zero_weight_points():
    X = np.array([[0.0], [100.0], [1.0], [2.0]])
    w = np.array([1.0, 0.0, 1.0, 1.0])
    for s in range(20):
        idx = kmeans_plusplus(X, w / w.sum(), 3, np.random.default_rng(s))
        assert 1 not in idx


def test_estimator_api(rng):
    X = np.concatenate([rng.normal(0.2, 0.05, 100), rng.normal(0.8, 0.05, 100)])[:, None]
    est = TruncatedGaussianMixture(n_components=2, lower=[0.0], upper=[1.0], random_state=0)
    assert est.fit(X) is est
    assert sorted(np.round(est.means_[:, 0], 1)) == [0.2, 0.8]
    assert est.score_samples(X).shape == (200,)
    assert np.isfinite(est.score(X))
    S = est.sample(50)
    assert S.shape == (50, 1) and np.all((S > 0) & (S < 1))
    assert est.get_params()["n_components"] == 2
    assert gmm_fit_em(X, np.ones(200), 2, np.random.default_rng(0)).n_components == 2
