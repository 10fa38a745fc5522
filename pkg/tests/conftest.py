"""Shared fixtures: tiny schedules, priors and measurement problems."""
from __future__ import annotations

import logging

import numpy as np
import pytest

from g2d2.core.decoder import Codebook, LinearDecoder, random_codebook, random_linear_decoder
from g2d2.core.noise_process import build_schedule
from g2d2.core.operators import IdentityOperator, LinearProblem, MaskingOperator
from g2d2.core.prior import independent_prior, markov_chain_prior


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_schedule():
    """K=3, T=4 schedule with noticeable per-step corruption."""
    return build_schedule(4, 3, alpha_bar_1=0.9, alpha_bar_T=0.05, gamma_bar_1=0.02, gamma_bar_T=0.9)


@pytest.fixture
def chain_prior():
    return markov_chain_prior(K=3, d_z=2, coupling=1.5)


@pytest.fixture
def product_prior():
    return independent_prior(np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]]))


@pytest.fixture
def codebook():
    return Codebook(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]))


@pytest.fixture
def identity_decoder():
    return LinearDecoder.identity(d_z=2, d_b=2)


@pytest.fixture
def random_pair():
    """(codebook, linear decoder) for K=3, d_z=2, d_b=2, d_x0=4."""
    gen = np.random.default_rng(7)
    return random_codebook(gen, 3, 2), random_linear_decoder(gen, 2, 2, 4)


@pytest.fixture
def identity_problem(codebook, identity_decoder):
    """Noisy identity measurement of the field (0, 1)."""
    x0 = identity_decoder.forward(codebook.lookup([0, 1]))
    return LinearProblem(IdentityOperator(4), x0 + np.array([0.05, -0.02, 0.01, 0.03]), sigma_eta=0.3)


@pytest.fixture
def inpainting_problem(codebook, identity_decoder):
    x0 = identity_decoder.forward(codebook.lookup([2, 0]))
    op = MaskingOperator(4, [0, 3])
    return LinearProblem(op, op.apply(x0), sigma_eta=0.3)


@pytest.fixture(autouse=True)
def _reset_g2d2_logging():
    """Drop handlers installed by setup_logging so tests do not share streams."""
    yield
    logger = logging.getLogger("g2d2")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
