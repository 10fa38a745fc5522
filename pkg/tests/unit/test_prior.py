"""Tests for tabular priors and the denoiser stand-ins."""
import numpy as np
import pytest

from g2d2.core.noise_process import build_schedule, cumulative_matrix
from g2d2.core.prior import (
    ProductMarginalDenoiser,
    TabularDenoiser,
    TabularJointPrior,
    UniformDenoiser,
    dirichlet_prior,
    exact_conditional,
    exact_denoiser,
    independent_prior,
    markov_chain_prior,
)
from g2d2.core.types import TokenField
from g2d2.utils.numerics import field_index

pytestmark = pytest.mark.unit


def _bayes_by_loop(prior, s, t, zt):
    """Second, loop-based Bayes enumeration for comparison."""
    Q = cumulative_matrix(s, t)
    weights = np.zeros((prior.d_z, prior.K))
    total = 0.0
    for field, p in zip(prior.fields, prior.probs()):
        w = p
        for i, k in enumerate(field):
            w *= Q[zt.tokens[i], k]
        total += w
        for i, k in enumerate(field):
            weights[i, k] += w
    return weights / total


def test_tables_are_normalized(chain_prior, product_prior):
    for prior in (chain_prior, product_prior):
        assert prior.probs().sum() == pytest.approx(1.0, abs=1e-12)
        assert prior.fields.shape == (prior.K**prior.d_z, prior.d_z)


def test_independent_prior_marginals(product_prior):
    assert np.allclose(product_prior.marginals().probs, [[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]])
    field = TokenField([0, 1], 3)
    assert product_prior.logprob(field) == pytest.approx(np.log(0.5 * 0.6))


def test_markov_chain_prior_couples_dimensions():
    """Test positive coupling makes equal neighbours more likely than the product of marginals"""
    prior = markov_chain_prior(K=2, d_z=2, coupling=2.0)
    p = prior.probs()
    marg = prior.marginals().probs
    same = p[field_index([0, 0], 2)] + p[field_index([1, 1], 2)]
    product_same = marg[0, 0] * marg[1, 0] + marg[0, 1] * marg[1, 1]
    assert same > product_same + 0.1


def test_markov_chain_prior_rejects_bad_initial():
    with pytest.raises(ValueError):
        markov_chain_prior(K=3, d_z=2, coupling=1.0, initial=np.array([0.5, 0.5]))


def test_from_table_and_validation():
    prior = TabularJointPrior.from_table(np.array([1.0, 0.0, 1.0, 2.0]), K=2, d_z=2)
    assert np.allclose(prior.probs(), [0.25, 0.0, 0.25, 0.5])
    with pytest.raises(ValueError):
        TabularJointPrior(np.zeros(4), K=2, d_z=2)
    with pytest.raises(ValueError):
        TabularJointPrior.from_table(np.ones(3), K=2, d_z=2)


def test_logprob_rejects_masked(product_prior):
    with pytest.raises(ValueError):
        product_prior.logprob(TokenField([3, 0], 3))


def test_sample_follows_table():
    prior = TabularJointPrior.from_table(np.array([0.7, 0.0, 0.0, 0.3]), K=2, d_z=2)
    rng = np.random.default_rng(0)
    draws = [prior.sample(rng) for _ in range(4000)]
    share = np.mean([d == TokenField([0, 0], 2) for d in draws])
    assert abs(share - 0.7) < 0.03
    assert all(d in (TokenField([0, 0], 2), TokenField([1, 1], 2)) for d in draws)


def test_dirichlet_prior_is_seeded():
    a = dirichlet_prior(3, 2, np.random.default_rng(9))
    b = dirichlet_prior(3, 2, np.random.default_rng(9))
    assert np.array_equal(a.log_probs(), b.log_probs())


def test_all_masked_gives_prior_marginals(chain_prior, small_schedule):
    """Test an all-MASK z_T is uninformative"""
    zt = TokenField.all_masked(2, 3)
    out = exact_denoiser(chain_prior, small_schedule, small_schedule.T, zt)
    assert np.allclose(out.probs, chain_prior.marginals().probs, atol=1e-10)


def test_clean_limit_returns_observed_tokens(chain_prior):
    s = build_schedule(4, 3, 0.999999, 0.1, 1e-7, 0.8)
    out = exact_denoiser(chain_prior, s, 1, TokenField([2, 0], 3))
    assert np.allclose(out.probs, [[0, 0, 1], [1, 0, 0]], atol=1e-5)


def test_exact_denoiser_matches_loop_enumeration(chain_prior, small_schedule):
    for t in range(1, small_schedule.T + 1):
        for tokens in ([3, 1], [0, 2], [3, 3], [1, 1]):
            zt = TokenField(tokens, 3)
            out = exact_denoiser(chain_prior, small_schedule, t, zt)
            assert np.allclose(out.probs, _bayes_by_loop(chain_prior, small_schedule, t, zt), atol=1e-12)


def test_exact_conditional_is_normalized(chain_prior, small_schedule):
    joint = exact_conditional(chain_prior, small_schedule, 2, TokenField([1, 3], 3))
    assert joint.sum() == pytest.approx(1.0, abs=1e-12)


def test_more_revealed_tokens_never_hurt_truth(small_schedule):
    """Test revealing a correct token does not lower the posterior of the truth"""
    rng = np.random.default_rng(11)
    for _ in range(10):
        prior = dirichlet_prior(3, 3, rng)
        truth = prior.fields[rng.integers(prior.fields.shape[0])]
        idx = field_index(truth, 3)
        partial = TokenField([truth[0], 3, 3], 3)
        fuller = TokenField([truth[0], truth[1], 3], 3)
        p_partial = exact_conditional(prior, small_schedule, 2, partial)[idx]
        p_fuller = exact_conditional(prior, small_schedule, 2, fuller)[idx]
        assert p_fuller >= p_partial - 1e-12


def test_tabular_denoiser_delegates_and_caches(chain_prior, small_schedule):
    den = TabularDenoiser(chain_prior, small_schedule)
    zt = TokenField([3, 1], 3)
    first = den.predict(zt, 2)
    assert np.allclose(first.probs, exact_denoiser(chain_prior, small_schedule, 2, zt).probs)
    assert den.predict(TokenField([3, 1], 3), 2) is first


def test_tabular_denoiser_rejects_mismatched_schedule(chain_prior):
    with pytest.raises(ValueError):
        TabularDenoiser(chain_prior, build_schedule(3, 4, 0.9, 0.1, 0.02, 0.8))


def test_uniform_and_marginal_denoisers():
    zt = TokenField([0, 3], 3)
    assert np.allclose(UniformDenoiser(2, 3).predict(zt, 1).probs, 1.0 / 3)
    rows = np.array([[0.1, 0.2, 0.7], [0.3, 0.3, 0.4]])
    den = ProductMarginalDenoiser(rows)
    assert np.allclose(den.predict(zt, 1).probs, rows)
    assert np.allclose(den.predict(TokenField([1, 1], 3), 4).probs, rows)
    assert (den.d_z, den.K) == (2, 3)


def test_independent_prior_from_rows_is_product(product_prior):
    rows = product_prior.marginals().probs
    again = independent_prior(rows)
    assert np.allclose(again.probs(), product_prior.probs())
