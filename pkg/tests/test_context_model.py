import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from raremix.context_model import (ContextModelError, PoolExhausted, SelectionState, fit_rare_gaussian,
                                   log_likelihood, sample_targets, select_rare_nucleus, selection_probs)


def brute_logpdf(mu, cov, x):
    d = x - mu
    p = len(mu)
    return -0.5 * (p * math.log(2 * math.pi) + math.log(np.linalg.det(cov)) + d @ np.linalg.inv(cov) @ d)


def test_fit_two_points():
    m = fit_rare_gaussian([[0, 0], [2, 2]], reg_eps=1e-3)
    np.testing.assert_allclose(m.mean, [1, 1])
    np.testing.assert_allclose(m.covariance, [[2 + 1e-3, 2], [2, 2 + 1e-3]])
    np.testing.assert_allclose(m.cholesky @ m.cholesky.T, m.covariance, atol=1e-8)
    assert np.abs(m.covariance - m.covariance.T).max() <= 1e-10


def test_fit_identical_points_regularized():
    m = fit_rare_gaussian([[3.0, -1.0]] * 5, reg_eps=1e-4)
    np.testing.assert_allclose(m.mean, [3, -1])
    np.testing.assert_allclose(m.covariance, 1e-4 * np.eye(2))
    # default ridge still rescues a zero-variance pool
    assert np.isfinite(log_likelihood(fit_rare_gaussian([[1.0, 1.0]] * 3), [1.0, 1.0]))


def test_fit_recovers_generator_mean():
    rng = np.random.default_rng(0)
    mu, sigma = np.array([1.0, -2.0, 0.5]), np.array([1.0, 2.0, 0.5])
    X = mu + sigma * rng.standard_normal((100, 3))
    m = fit_rare_gaussian(X)
    assert np.all(np.abs(m.mean - mu) <= 4 * sigma / np.sqrt(100))


def test_fit_insufficient_data():
    with pytest.raises(ContextModelError):
        fit_rare_gaussian([[1.0, 2.0]])


def test_log_likelihood_at_mean_and_scalar():
    m = fit_rare_gaussian([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]])
    p = 2
    expected = -0.5 * (p * math.log(2 * math.pi) + math.log(np.linalg.det(m.covariance)))
    assert log_likelihood(m, m.mean) == pytest.approx(expected, rel=1e-12)
    # unbiased variance of {-1, 1} is 2; of {-1/sqrt2, 1/sqrt2} it is 1
    h = 1 / math.sqrt(2)
    m1 = fit_rare_gaussian([[-h], [h]], reg_eps=0.0)
    np.testing.assert_allclose(m1.covariance, [[1.0]])
    assert log_likelihood(m1, [1.0]) == pytest.approx(-0.5 * (math.log(2 * math.pi) + 1), abs=1e-5)
    assert log_likelihood(m1, [1.0]) == pytest.approx(-1.41894, abs=1e-5)


def test_log_likelihood_monotone_and_dim_check():
    m = fit_rare_gaussian(np.random.default_rng(1).standard_normal((20, 3)))
    d = np.array([1.0, 0.5, -0.2])
    vals = [log_likelihood(m, m.mean + s * d) for s in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ContextModelError):
        log_likelihood(m, [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4]))
def test_log_likelihood_matches_brute_force(seed, p):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((p + 5, p)) * rng.uniform(0.5, 2, p) + rng.standard_normal(p)
    m = fit_rare_gaussian(X)
    x = m.mean + rng.standard_normal(p)
    ref = brute_logpdf(m.mean, m.covariance, x)
    assert abs(log_likelihood(m, x) - ref) <= 1e-8 * abs(ref)


def _pool(n, dim=2, seed=0, prefix="t"):
    rng = np.random.default_rng(seed)
    return [(f"{prefix}{i}", rng.standard_normal(dim)) for i in range(n)]


def test_sample_targets_exhaustive_and_empty():
    m = fit_rare_gaussian(np.random.default_rng(0).standard_normal((10, 2)))
    majors, bgs = _pool(4, prefix="m"), _pool(3, seed=1, prefix="b")
    state = SelectionState()
    assert sample_targets(m, majors, bgs, 0, state, np.random.default_rng(0)) == []
    assert state.consumed_targets == set()
    got = sample_targets(m, majors, bgs, 7, state, np.random.default_rng(0))
    assert sorted(t.key for t in got) == sorted([k for k, _ in majors + bgs])
    assert {t.kind for t in got if t.key.startswith("m")} == {"major"}
    with pytest.raises(PoolExhausted):
        sample_targets(m, majors, bgs, 1, state, np.random.default_rng(0))


def test_sample_targets_never_reselects_consumed():
    m = fit_rare_gaussian(np.random.default_rng(0).standard_normal((10, 2)))
    majors = _pool(20, prefix="m")
    state = SelectionState()
    rng = np.random.default_rng(3)
    seen = []
    for _ in range(20):
        (t,) = sample_targets(m, majors, [], 1, state, rng)
        seen.append(t.key)
    assert len(set(seen)) == 20


def test_sample_targets_dominant_first():
    m = fit_rare_gaussian(np.random.default_rng(0).standard_normal((10, 2)))
    majors = _pool(30, prefix="m")
    ll = {k: 0.0 for k, _ in majors}
    ll["m7"] = 50.0
    hits = 0
    for seed in range(1000):
        (t,) = sample_targets(m, majors, [], 1, SelectionState(), np.random.default_rng(seed), log_liks=ll)
        hits += t.key == "m7"
    assert hits >= 999


def test_sample_targets_deterministic_and_replay():
    m = fit_rare_gaussian(np.random.default_rng(0).standard_normal((10, 2)))
    majors, bgs = _pool(15, prefix="m"), _pool(15, seed=2, prefix="b")
    a = sample_targets(m, majors, bgs, 10, SelectionState(), np.random.default_rng(9))
    b = sample_targets(m, majors, bgs, 10, SelectionState(), np.random.default_rng(9))
    assert [t.key for t in a] == [t.key for t in b]
    c = sample_targets(m, majors, bgs, 10, SelectionState(), np.random.default_rng(123), replay=[t.key for t in a])
    assert [t.key for t in c] == [t.key for t in a]


def test_selection_two_point_value():
    p = selection_probs(np.zeros(1), np.array([[1.0], [2.0]]), np.array([1.0, 1.0]))
    assert p[0] == pytest.approx(math.exp(-1) / (math.exp(-1) + math.exp(-2)), abs=1e-12)
    assert p[0] == pytest.approx(0.7311, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=1, max_size=12), st.integers(0, 2**32 - 1))
def test_selection_normalized(dists, seed):
    rng = np.random.default_rng(seed)
    rare = np.array(dists)[:, None]
    w = rng.uniform(1, 30, len(dists))
    assert abs(selection_probs(np.zeros(1), rare, w).sum() - 1.0) <= 1e-12


def test_selection_decreasing_in_distance():
    rare = np.array([[0.5], [1.0], [1.7], [3.0]])
    p = selection_probs(np.zeros(1), rare, np.ones(4))
    assert np.all(np.diff(p) < 0)


def test_select_single_and_weight_update():
    state = SelectionState()
    assert select_rare_nucleus(np.zeros(2), [("a", np.ones(2))], state, np.random.default_rng(0)) == "a"
    assert state.weight("a") == 2.0


def test_repeated_selection_lowers_probability():
    pool = [("a", np.array([1.0, 0.0])), ("b", np.array([0.0, 1.5]))]
    state = SelectionState()
    rare = np.stack([x for _, x in pool])
    before = selection_probs(np.zeros(2), rare, [state.weight("a"), state.weight("b")])[0]
    state.bump("a")
    after = selection_probs(np.zeros(2), rare, [state.weight("a"), state.weight("b")])[0]
    assert after < before


def test_select_uniform_chi_square():
    pool = [(i, np.array([np.cos(a), np.sin(a)])) for i, a in enumerate(np.linspace(0, 2 * np.pi, 5, endpoint=False))]
    rng = np.random.default_rng(11)
    counts = np.zeros(5)
    for _ in range(10000):
        counts[select_rare_nucleus(np.zeros(2), pool, SelectionState(), rng)] += 1
    assert stats.chisquare(counts).pvalue > 0.01
