import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from gmmreject.bench import BenchSpec, oracle_sample
from gmmreject.stats import (cramer_statistic, cramer_two_sample, ks_statistic, ks_two_sample,
                             two_sample_test)


def brute_ks(x, y):
    best = 0.0
    for t in np.concatenate([x, y]):
        fx = sum(1 for v in x if v <= t) / len(x)
        fy = sum(1 for v in y if v <= t) / len(y)
        best = max(best, abs(fx - fy))
    return best


def brute_cramer(X, Y):
    n1, n2 = len(X), len(Y)
    dist = lambda A, B: np.mean([np.linalg.norm(a - b) for a in A for b in B])
    return n1 * n2 / (n1 + n2) * (dist(X, Y) - 0.5 * dist(X, X) - 0.5 * dist(Y, Y))


# -- KS ------------------------------------------------------------------------------

def test_ks_identical():
    x = np.random.default_rng(0).normal(size=100)
    r = ks_two_sample(x, x.copy())
    assert r.statistic == 0.0 and r.p_value == 1.0 and r.method == "ks-asymptotic"


def test_ks_disjoint_constants():
    r = ks_two_sample(np.zeros(1000), np.ones(1000))
    assert r.statistic == 1.0 and r.p_value < 1e-100


@settings(max_examples=30)
@given(seed=st.integers(0, 2 ** 31), n1=st.integers(1, 40), n2=st.integers(1, 40),
       ties=st.booleans())
def test_ks_matches_brute_force(seed, n1, n2, ties):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n1), rng.normal(0.3, 1.2, size=n2)
    if ties:
        x, y = np.round(x), np.round(y)
    assert abs(ks_statistic(x, y) - brute_ks(x, y)) <= 1e-12


def test_ks_agrees_with_scipy_statistic(rng):
    x, y = rng.normal(size=300), rng.normal(0.1, size=250)
    assert ks_statistic(x, y) == pytest.approx(ks_2samp(x, y).statistic, abs=1e-15)


def test_ks_p_monotone_in_statistic(rng):
    x = rng.normal(size=200)
    results = [ks_two_sample(x, rng.normal(s, size=200)) for s in np.linspace(0, 1.5, 12)]
    results.sort(key=lambda r: r.statistic)
    p = [r.p_value for r in results]
    assert all(a >= b for a, b in zip(p, p[1:]))


def test_ks_size_floor():
    with pytest.raises(ValueError):
        ks_two_sample(np.zeros(24), np.zeros(100))


def test_ks_self_consistency_on_oracle():
    spec = BenchSpec("sinusoid", d=1)
    rng = np.random.default_rng(2024)
    passed = sum(
        ks_two_sample(oracle_sample(spec, 10_000, rng)[:, 0],
                      oracle_sample(spec, 10_000, rng)[:, 0]).p_value > 0.01
        for _ in range(100))
    assert passed >= 99


# -- Cramer ------------------------------------------------------------------------

def test_cramer_identical_samples():
    X = np.random.default_rng(1).normal(size=(80, 3))
    r = cramer_two_sample(X, X.copy(), rng=0)
    assert r.statistic == 0.0 and r.p_value == 1.0 and r.method == "cramer-permutation"


def test_cramer_gross_shift():
    X = oracle_sample(BenchSpec("sinusoid", d=3), 300, np.random.default_rng(2))
    B = 200
    r = cramer_two_sample(X, X + 10.0, B=B, rng=0)
    assert r.p_value <= 1 / (B + 1) + 1e-15


def test_cramer_statistic_matches_brute_force(rng):
    X, Y = rng.normal(size=(30, 2)), rng.normal(0.5, size=(25, 2))
    assert cramer_statistic(X, Y) == pytest.approx(brute_cramer(X, Y), rel=1e-10)


def test_cramer_symmetric_and_permutation_invariant(rng):
    X, Y = rng.normal(size=(60, 3)), rng.normal(0.2, size=(70, 3))
    t = cramer_statistic(X, Y)
    assert cramer_statistic(Y, X) == pytest.approx(t, rel=1e-12)
    assert cramer_statistic(X[rng.permutation(60)], Y[rng.permutation(70)]) == pytest.approx(t, rel=1e-12)


def test_cramer_deterministic(rng):
    X, Y = rng.normal(size=(60, 2)), rng.normal(size=(70, 2))
    a = cramer_two_sample(X, Y, rng=np.random.default_rng(5))
    b = cramer_two_sample(X, Y, rng=np.random.default_rng(5))
    assert a == b


def test_cramer_subsampling_is_seeded(rng):
    X, Y = rng.normal(size=(300, 2)), rng.normal(size=(300, 2))
    a = cramer_two_sample(X, Y, rng=3, max_points=100)
    b = cramer_two_sample(X, Y, rng=3, max_points=100)
    assert a == b and a.n1 == a.n2 == 100


@pytest.mark.parametrize("kwargs, match", [
    (dict(X=np.zeros((49, 2)), Y=np.zeros((60, 2))), "at least 50"),
    (dict(X=np.zeros((60, 2)), Y=np.zeros((60, 3))), "dimension"),
    (dict(X=np.zeros((60, 2)), Y=np.zeros((60, 2)), B=50), "permutations"),
])
def test_cramer_errors(kwargs, match):
    with pytest.raises(ValueError, match=match):
        cramer_two_sample(**kwargs)


def test_cramer_self_consistency_on_oracle():
    # 100 repetitions at 500 points per side keeps the experiment fast
    spec = BenchSpec("sinusoid", d=3)
    rng = np.random.default_rng(77)
    passed = sum(
        cramer_two_sample(oracle_sample(spec, 500, rng), oracle_sample(spec, 500, rng),
                          rng=rng).p_value > 0.01
        for _ in range(100))
    assert passed >= 95


def test_dispatch_by_dimension(rng):
    assert two_sample_test(rng.normal(size=(50, 1)), rng.normal(size=(50, 1))).method == "ks-asymptotic"
    assert two_sample_test(rng.normal(size=(60, 2)), rng.normal(size=(60, 2)), rng=0).method == \
        "cramer-permutation"


def test_result_to_dict():
    r = ks_two_sample(np.arange(30.0), np.arange(30.0))
    assert r.to_dict() == {"statistic": 0.0, "p_value": 1.0, "method": "ks-asymptotic",
                           "n1": 30, "n2": 30}
