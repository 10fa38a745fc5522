"""Tests for schedules, forward sampling and the reverse kernels."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g2d2.core.errors import ScheduleError
from g2d2.core.noise_process import (
    DEFAULT_ENDPOINTS,
    TransitionSchedule,
    _assemble,
    build_schedule,
    cumulative_forward_dist,
    cumulative_matrix,
    markov_posterior,
    markov_reverse_kernel,
    sample_zt_given_z0,
    single_step_matrix,
    star_reverse_kernel,
    terminal_distribution,
)
from g2d2.core.oracle import random_schedule
from g2d2.core.types import CategoricalField, TokenField
from g2d2.utils.numerics import sample_categorical

pytestmark = pytest.mark.unit


def test_default_endpoints():
    """Test the near-clean / near-all-MASK default schedule"""
    s = build_schedule(100, 16, *DEFAULT_ENDPOINTS)
    assert s.alpha_bar[0] == pytest.approx(0.99999)
    assert s.gamma_bar_raw[-1] == pytest.approx(0.99999)
    assert np.all(np.diff(s.alpha_bar) < 0), "alpha_bar should decrease"
    assert np.all(np.diff(s.gamma_bar) > 0), "gamma_bar should increase"


def test_single_step_beta_bar():
    """Test beta_bar uses the (K + 1) divisor and the residual lands on MASK"""
    s = build_schedule(1, 4, 0.5, 0.5, 0.4, 0.4)
    assert s.beta_bar[0] == pytest.approx(0.02)
    assert s.gamma_bar_raw[0] == pytest.approx(0.4)
    assert s.gamma_bar[0] == pytest.approx(0.42)
    dist = cumulative_forward_dist(s, 1, 2)
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)
    assert dist[2] == pytest.approx(0.52)
    assert dist[4] == pytest.approx(0.42)


def test_interpolation_is_linear():
    """Test alpha_bar and gamma_bar against a hand-coded interpolation"""
    s = build_schedule(10, 3, 0.95, 0.05, 0.01, 0.9)
    for t in range(1, 11):
        w = (t - 1) / 9
        assert s.alpha_bar[t - 1] == pytest.approx(0.95 + w * (0.05 - 0.95), abs=1e-14)
        assert s.gamma_bar_raw[t - 1] == pytest.approx(0.01 + w * (0.9 - 0.01), abs=1e-14)


@pytest.mark.parametrize(
    "endpoints",
    [
        (1.0, 0.1, 0.01, 0.5),
        (0.9, 0.1, 0.0, 0.5),
        (0.1, 0.9, 0.01, 0.5),
        (0.9, 0.1, 0.5, 0.01),
        (0.9, 0.1, 0.2, 0.5),
    ],
)
def test_rejects_bad_endpoints(endpoints):
    """Test invalid endpoint combinations are rejected"""
    with pytest.raises(ScheduleError):
        build_schedule(5, 3, *endpoints)


def test_rejects_negative_per_step_beta():
    """Test endpoints whose recovered beta_t would go negative are rejected"""
    # alpha_bar / (1 - gamma_bar) increases here
    with pytest.raises(ScheduleError, match="negative per-step beta"):
        build_schedule(4, 3, 0.5, 0.05, 0.01, 0.94)


def test_mask_column_is_absorbing(small_schedule):
    """Test the MASK source column of every Q_t is onehot(MASK)"""
    K = small_schedule.K
    for t in range(1, small_schedule.T + 1):
        Q = single_step_matrix(small_schedule, t)
        expected = np.zeros(K + 1)
        expected[K] = 1.0
        assert np.array_equal(Q[:, K], expected)
        assert np.allclose(Q.sum(axis=0), 1.0, atol=1e-12), "columns must sum to 1"


def test_identity_step():
    """Test Q_t is the identity when gamma_t = beta_t = 0"""
    assert np.array_equal(_assemble(3, 1.0, 0.0, 0.0), np.eye(4))


def test_cumulative_matches_explicit_product():
    """Test Q_3 Q_2 Q_1 applied to a one-hot equals the closed form (K=3, T=5)"""
    s = build_schedule(5, 3, 0.9, 0.1, 0.02, 0.8)
    product = single_step_matrix(s, 3) @ single_step_matrix(s, 2) @ single_step_matrix(s, 1)
    for k in range(3):
        onehot = np.eye(4)[k]
        assert np.allclose(product @ onehot, cumulative_forward_dist(s, 3, k), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(K=st.integers(2, 8), T=st.integers(2, 20), seed=st.integers(0, 2**31 - 1))
def test_closed_form_equivalence(K, T, seed):
    """Test the closed-form cumulative matrix equals the per-step product for random schedules"""
    s = random_schedule(np.random.default_rng(seed), T, K)
    product = np.eye(K + 1)
    for t in range(1, T + 1):
        product = single_step_matrix(s, t) @ product
        assert np.abs(product - cumulative_matrix(s, t)).max() < 1e-11
        assert s.beta[t - 1] >= 0.0


def test_cumulative_at_zero_is_identity(small_schedule):
    assert np.array_equal(cumulative_matrix(small_schedule, 0), np.eye(small_schedule.K + 1))


def test_terminal_mask_probability():
    """Test MASK probability at t=T is gamma_bar_T plus beta_bar_T"""
    s = build_schedule(100, 16, *DEFAULT_ENDPOINTS)
    dist = cumulative_forward_dist(s, 100, 5)
    assert dist[16] == pytest.approx(0.99999 + s.beta_bar[-1], abs=1e-15)


def test_forward_dist_rejects_mask(small_schedule):
    with pytest.raises(ScheduleError):
        cumulative_forward_dist(small_schedule, 1, small_schedule.K)


def test_step_out_of_range(small_schedule):
    with pytest.raises(ScheduleError):
        single_step_matrix(small_schedule, 0)
    with pytest.raises(ScheduleError):
        single_step_matrix(small_schedule, small_schedule.T + 1)


def test_sample_mask_fraction(small_schedule):
    """Test the MASK fraction at t=T over 10,000 dimensions matches the closed form"""
    s = small_schedule
    z0 = TokenField(np.zeros(10_000, dtype=int), s.K)
    zt = sample_zt_given_z0(s, s.T, z0, np.random.default_rng(0))
    expected = s.gamma_bar[-1]
    assert abs(zt.masked.mean() - expected) < 0.01, f"mask fraction {zt.masked.mean()} vs {expected}"


def test_sample_is_deterministic(small_schedule):
    z0 = TokenField([0, 1, 2, 1], small_schedule.K)
    a = sample_zt_given_z0(small_schedule, 3, z0, np.random.default_rng(42))
    b = sample_zt_given_z0(small_schedule, 3, z0, np.random.default_rng(42))
    assert a == b


def test_sample_near_clean_keeps_tokens():
    s = build_schedule(5, 3, 0.999999, 0.1, 1e-7, 0.8)
    z0 = TokenField([0, 1, 2, 0, 1, 2], 3)
    for seed in range(20):
        assert sample_zt_given_z0(s, 1, z0, np.random.default_rng(seed)) == z0


def test_sample_rejects_masked_input(small_schedule):
    with pytest.raises(ScheduleError):
        sample_zt_given_z0(small_schedule, 2, TokenField([0, 3], 3), np.random.default_rng(0))


def test_markov_posterior_never_remasks(small_schedule):
    """Test an unmasked z_t gives zero probability to MASK at t-1"""
    s = small_schedule
    for t in range(2, s.T + 1):
        for z0 in range(s.K):
            for zt in range(s.K):
                post = markov_posterior(s, t, z0, zt)
                assert post[s.K] == 0.0
                assert post.sum() == pytest.approx(1.0, abs=1e-10)


def test_markov_posterior_mask_matches_bayes(small_schedule):
    """Test the posterior for z_t = MASK against explicit two-step Bayes"""
    s = small_schedule
    K = s.K
    for t in range(2, s.T + 1):
        for z0 in range(K):
            prev = cumulative_matrix(s, t - 1)[:, z0]
            Q = single_step_matrix(s, t)
            weights = np.array([prev[j] * Q[K, j] for j in range(K + 1)])
            assert np.allclose(markov_posterior(s, t, z0, K), weights / weights.sum(), atol=1e-12)


def test_markov_posterior_clean_limit():
    """Test z_t = z_0 with negligible beta keeps z_0 at t-1"""
    s = build_schedule(4, 3, 0.9999, 0.5, 1e-6, 0.3)
    post = markov_posterior(s, 2, 1, 1)
    assert post[1] > 1 - 1e-4


def test_markov_posterior_rejects_t1(small_schedule):
    with pytest.raises(ScheduleError):
        markov_posterior(small_schedule, 1, 0, 0)


def test_star_kernel_mask_probability(small_schedule, rng):
    """Test the star kernel puts exactly gamma_bar_{t-1} on MASK for any alpha"""
    s = small_schedule
    for t in range(2, s.T + 1):
        alpha = CategoricalField(rng.dirichlet(np.ones(s.K), size=5))
        kernel = star_reverse_kernel(s, t, alpha)
        assert np.allclose(kernel[:, s.K], s.gamma_bar[t - 2], atol=1e-14)
        assert np.allclose(kernel.sum(axis=1), 1.0, atol=1e-12)


def test_star_kernel_one_hot_alpha(small_schedule):
    s = small_schedule
    alpha = CategoricalField(np.eye(s.K))
    kernel = star_reverse_kernel(s, 3, alpha)
    for k in range(s.K):
        assert np.allclose(kernel[k], cumulative_forward_dist(s, 2, k), atol=1e-14)


def test_star_kernel_uniform_alpha(small_schedule):
    s = small_schedule
    kernel = star_reverse_kernel(s, 4, CategoricalField.uniform(1, s.K))
    expected = sum(cumulative_forward_dist(s, 3, k) for k in range(s.K)) / s.K
    assert np.allclose(kernel[0], expected, atol=1e-14)


def test_star_kernel_at_t1_is_clean(small_schedule):
    alpha = CategoricalField(np.array([[0.2, 0.5, 0.3]]))
    kernel = star_reverse_kernel(small_schedule, 1, alpha)
    assert np.array_equal(kernel, np.array([[0.2, 0.5, 0.3, 0.0]]))


def test_star_kernel_rejects_wrong_width(small_schedule):
    with pytest.raises(ScheduleError):
        star_reverse_kernel(small_schedule, 2, CategoricalField.uniform(2, 4))


def test_star_kernel_marginal_consistency(small_schedule):
    """Test sampling the star kernel with a one-hot alpha reproduces the forward marginal"""
    s = small_schedule
    n = 20_000
    alpha = CategoricalField(np.tile(np.eye(s.K)[1], (n, 1)))
    kernel = star_reverse_kernel(s, 3, alpha)
    draws = sample_categorical(kernel, np.random.default_rng(3))
    freq = np.bincount(draws, minlength=s.K + 1) / n
    assert np.allclose(freq, cumulative_forward_dist(s, 2, 1), atol=0.015)


def test_markov_kernel_no_remask(small_schedule, rng):
    """Test unmasked z_t dimensions never return to MASK under the Markov kernel"""
    s = small_schedule
    zt = TokenField([0, 3, 2, 3], s.K)
    for t in range(2, s.T + 1):
        alpha = CategoricalField(rng.dirichlet(np.ones(s.K), size=4))
        kernel = markov_reverse_kernel(s, t, alpha, zt)
        assert np.all(kernel[~zt.masked, s.K] == 0.0)
        assert np.allclose(kernel.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(kernel[zt.masked, s.K] > 0.0)


def test_markov_kernel_one_hot_matches_posterior(small_schedule):
    s = small_schedule
    alpha = CategoricalField(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]))
    zt = TokenField([3, 2], s.K)
    kernel = markov_reverse_kernel(s, 3, alpha, zt)
    assert np.allclose(kernel[0], markov_posterior(s, 3, 1, 3), atol=1e-14)
    assert np.allclose(kernel[1], markov_posterior(s, 3, 0, 2), atol=1e-14)


def test_schedule_is_read_only(small_schedule):
    assert isinstance(small_schedule, TransitionSchedule)
    with pytest.raises(ValueError):
        small_schedule.alpha_bar[0] = 0.5


def test_terminal_distribution_mixes_clean_marginals(small_schedule):
    clean = CategoricalField(np.array([[0.05, 0.05, 0.9], [1.0, 0.0, 0.0]]))
    dist = terminal_distribution(small_schedule, clean)
    assert np.allclose(dist[0], [0.015, 0.015, 0.0575, 0.9125], atol=1e-12)
    assert np.allclose(dist[1], [0.0625, 0.0125, 0.0125, 0.9125], atol=1e-12)
    assert np.allclose(dist.sum(axis=1), 1.0)


def test_terminal_mask_floor(small_schedule):
    assert not small_schedule.terminal_is_masked
    assert build_schedule(4, 3).terminal_is_masked
    assert build_schedule(20, 5).terminal_is_masked
