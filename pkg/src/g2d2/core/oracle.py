"""Exact enumeration oracles for tiny problems.

Every routine here enumerates the full clean support (K**d_z fields) and, where a
chain is involved, all (K+1)**d_z noisy states. Sizes are guarded by
``check_enumeration``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from g2d2.core.decoder import Codebook, Decoder, LinearDecoder, hard_decode, random_codebook, random_linear_decoder
from g2d2.core.errors import ScheduleError
from g2d2.core.noise_process import TransitionSchedule, build_schedule, cumulative_matrix, terminal_distribution
from g2d2.core.operators import (
    BlurOperator,
    DownsampleOperator,
    IdentityOperator,
    LinearOperator,
    LinearProblem,
    MaskingOperator,
    MatrixOperator,
    MeasurementModel,
    gaussian_log_normalizer,
    log_likelihood,
    simulate_measurement,
)
from g2d2.core.prior import TabularJointPrior, dirichlet_prior, exact_conditional, independent_prior, joint_marginals
from g2d2.core.types import CategoricalField, TokenField
from g2d2.utils.numerics import check_enumeration, enumerate_fields, kl_divergence, safe_log

logger = logging.getLogger(__name__)

_NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class EnumeratedPosterior:
    """A distribution over all K**d_z clean fields, in :func:`enumerate_fields` order."""

    probs: np.ndarray
    K: int
    d_z: int

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float).ravel()
        if probs.size != self.K**self.d_z:
            raise ValueError(f"Expected {self.K**self.d_z} probabilities, got {probs.size}.")
        if probs.min() < 0.0 or abs(probs.sum() - 1.0) > _NORMALIZATION_TOL:
            raise ValueError(f"Enumerated distribution is not normalized (sum {probs.sum():.15g}).")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def fields(self) -> np.ndarray:
        return enumerate_fields(self.K, self.d_z)

    def marginals(self) -> CategoricalField:
        return joint_marginals(self.probs, self.fields, self.K)

    def tv(self, other: "EnumeratedPosterior") -> float:
        if (other.K, other.d_z) != (self.K, self.d_z):
            raise ValueError("Distributions live on different supports.")
        return 0.5 * float(np.abs(self.probs - other.probs).sum())


def clean_log_likelihoods(
    fields: np.ndarray, cb: Codebook, dec: Decoder, prob: LinearProblem, normalized: bool = False
) -> np.ndarray:
    """log q(y | z_0) for every enumerated field; optionally with the Gaussian constant."""
    K = cb.K
    values = np.array([log_likelihood(prob, hard_decode(cb, dec, TokenField(f, K))) for f in fields])
    if normalized:
        values = values + gaussian_log_normalizer(prob)
    return values


def _posterior_log_probs(prior: TabularJointPrior, cb: Codebook, dec: Decoder, prob: LinearProblem) -> np.ndarray:
    if prior.K != cb.K or prior.d_z != dec.d_z:
        raise ValueError("Prior, codebook and decoder disagree on K or d_z.")
    log_post = clean_log_likelihoods(prior.fields, cb, dec, prob) + prior.log_probs()
    return log_post - logsumexp(log_post)


def enumerate_posterior(
    prior: TabularJointPrior, cb: Codebook, dec: Decoder, prob: LinearProblem
) -> EnumeratedPosterior:
    """q(z_0 | y) proportional to q(y | z_0) q(z_0), normalized over the full support."""
    check_enumeration("enumerate_posterior", prior.K**prior.d_z)
    return EnumeratedPosterior(np.exp(_posterior_log_probs(prior, cb, dec, prob)), prior.K, prior.d_z)


def noisy_states(K: int, d_z: int) -> np.ndarray:
    """All (K+1)**d_z token fields including MASK, in lexicographic order."""
    return enumerate_fields(K + 1, d_z)


def forward_matrix(s: TransitionSchedule, t: int, states: np.ndarray, fields: np.ndarray) -> np.ndarray:
    """M[z_t, z_0] = q(z_t | z_0) for the product-form forward process at step t."""
    Q = cumulative_matrix(s, t)
    M = np.ones((states.shape[0], fields.shape[0]))
    for i in range(states.shape[1]):
        M *= Q[states[:, i]][:, fields[:, i]]
    return M


def _conditionals(M: np.ndarray, clean: np.ndarray) -> np.ndarray:
    """Rows q(z_0 | z_t, .) proportional to M[z_t, z_0] * clean[z_0]; unreachable rows stay zero."""
    joint = M * clean[None, :]
    norm = joint.sum(axis=1, keepdims=True)
    return np.divide(joint, norm, out=np.zeros_like(joint), where=norm > 0)


def _guard_chain(prior: TabularJointPrior, s: TransitionSchedule) -> Tuple[np.ndarray, np.ndarray]:
    if s.K != prior.K:
        raise ValueError(f"Schedule K={s.K} does not match prior K={prior.K}.")
    n_states = (prior.K + 1) ** prior.d_z
    check_enumeration("Star-decomposed chain", n_states * prior.K**prior.d_z * s.T)
    return noisy_states(prior.K, prior.d_z), prior.fields


def enumerate_star_decomp_marginal(
    prior: TabularJointPrior, s: TransitionSchedule, cb: Codebook, dec: Decoder, prob: LinearProblem
) -> EnumeratedPosterior:
    """z_0 marginal of the chain q(z_T | y) prod_t q(z_{t-1} | z_t, y) under the star model.

    Each local conditional is sum_{z_0} q(z_{t-1} | z_0) q(z_0 | z_t, y), with
    q(z_0 | z_t, y) obtained by Bayes over the enumerated joint.
    """
    states, fields = _guard_chain(prior, s)
    posterior = np.exp(_posterior_log_probs(prior, cb, dec, prob))
    M = forward_matrix(s, s.T, states, fields)
    marginal = M @ posterior
    for t in range(s.T, 0, -1):
        cond = _conditionals(M, posterior)
        clean = cond.T @ marginal
        if t == 1:
            return EnumeratedPosterior(clean / clean.sum(), prior.K, prior.d_z)
        M = forward_matrix(s, t - 1, states, fields)
        marginal = M @ clean
    raise ScheduleError("Schedule has no steps.")


def _mean_field_joint(alpha_t: np.ndarray, fields: np.ndarray) -> np.ndarray:
    """Product-form probabilities of every field, one row per noisy state: (S, F)."""
    out = np.ones((alpha_t.shape[0], fields.shape[0]))
    for i in range(fields.shape[1]):
        out *= alpha_t[:, i, :][:, fields[:, i]]
    return out


def _check_alpha_set(alpha: np.ndarray, prior: TabularJointPrior, s: TransitionSchedule) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    shape = (s.T, (prior.K + 1) ** prior.d_z, prior.d_z, prior.K)
    if alpha.shape != shape:
        raise ValueError(f"Variational parameters must have shape {shape}, got {alpha.shape}.")
    if alpha.min() < 0.0 or np.max(np.abs(alpha.sum(axis=-1) - 1.0)) > 1e-8:
        raise ValueError("Variational parameters must be normalized categoricals.")
    return alpha


def check_theorem1(
    prior: TabularJointPrior,
    s: TransitionSchedule,
    cb: Codebook,
    dec: Decoder,
    prob: LinearProblem,
    alpha: np.ndarray,
) -> Tuple[float, float]:
    """Both sides of the KL bound for a full set of mean-field parameters.

    ``alpha[t - 1, r]`` is the d_z x K field used at step t when z_t is the noisy
    state with flat index r. Returns ``(lhs, rhs)`` with

    lhs = KL(p_alpha(z_0 | y) || q(z_0 | y))
    rhs = sum_t E_{z_t ~ p_alpha} KL(alpha(t, z_t) || q(z_0 | z_t, y))

    where the p_alpha chain starts from q(z_T | y) and moves with
    sum_{z_0} q(z_{t-1} | z_0) alpha(t, z_t)(z_0).
    """
    states, fields = _guard_chain(prior, s)
    alpha = _check_alpha_set(alpha, prior, s)
    posterior = np.exp(_posterior_log_probs(prior, cb, dec, prob))

    M = forward_matrix(s, s.T, states, fields)
    marginal = M @ posterior
    rhs = 0.0
    for t in range(s.T, 0, -1):
        exact = _conditionals(M, posterior)
        approx = _mean_field_joint(alpha[t - 1], fields)
        for r in np.flatnonzero(marginal > 0):
            rhs += marginal[r] * kl_divergence(approx[r], exact[r])
        clean = approx.T @ marginal
        if t > 1:
            M = forward_matrix(s, t - 1, states, fields)
            marginal = M @ clean
    lhs = kl_divergence(clean, posterior)
    logger.debug("Bound check: lhs=%.6g rhs=%.6g", lhs, rhs)
    return lhs, rhs


def exact_conditional_parameters(
    prior: TabularJointPrior, s: TransitionSchedule, cb: Codebook, dec: Decoder, prob: LinearProblem
) -> np.ndarray:
    """Mean-field projections of q(z_0 | z_t, y) for every step and noisy state.

    States the posterior chain cannot reach get uniform rows.
    """
    states, fields = _guard_chain(prior, s)
    posterior = np.exp(_posterior_log_probs(prior, cb, dec, prob))
    out = np.full((s.T, states.shape[0], prior.d_z, prior.K), 1.0 / prior.K)
    for t in range(1, s.T + 1):
        cond = _conditionals(forward_matrix(s, t, states, fields), posterior)
        for r in np.flatnonzero(cond.sum(axis=1) > 0):
            out[t - 1, r] = joint_marginals(cond[r], fields, prior.K).probs
    return out


def mean_field_optimum(
    prior_out: CategoricalField,
    fields: np.ndarray,
    log_weights: np.ndarray,
    eta_kl: float = 1.0,
    sweeps: int = 200,
    tol: float = 1e-14,
) -> CategoricalField:
    """Coordinate-ascent minimizer of eta_kl * KL(alpha || prior_out) - E_alpha[log_weights].

    ``log_weights[f]`` scores the enumerated field ``fields[f]``. Each sweep sets
    alpha_i proportional to prior_out_i * exp(E_{alpha_-i}[log_weights | z_i] / eta_kl).
    When ``log_weights`` is a sum of per-dimension terms one sweep is exact.
    """
    if eta_kl <= 0:
        raise ValueError(f"eta_kl must be positive, got {eta_kl}.")
    K, d_z = prior_out.K, prior_out.d_z
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior_out.probs)
    alpha = prior_out.probs.copy()
    for _ in range(sweeps):
        previous = alpha.copy()
        for i in range(d_z):
            others = np.prod(np.delete(alpha[np.arange(d_z)[None, :], fields], i, axis=1), axis=1)
            expected = np.bincount(fields[:, i], weights=others * log_weights, minlength=K)
            logits = log_prior[i] + expected / eta_kl
            alpha[i] = np.exp(logits - logsumexp(logits))
        if np.max(np.abs(alpha - previous)) < tol:
            break
    return CategoricalField(alpha)


def mean_field_chain_marginal(
    prior: TabularJointPrior,
    s: TransitionSchedule,
    cb: Codebook,
    dec: Decoder,
    prob: LinearProblem,
    eta_kl: float = 1.0,
    likelihood_weight: Optional[float] = None,
) -> EnumeratedPosterior:
    """z_0 distribution of the star solver when every step reaches its objective's optimum.

    The chain mirrors the solver: z_T comes from the prior marginals, each step
    takes the exact denoiser marginals at z_t, replaces alpha by
    :func:`mean_field_optimum` of the hard (non-relaxed) objective and moves with
    the star kernel. ``likelihood_weight`` defaults to 1 / (2 sigma^2), which with
    ``eta_kl = 1`` makes the per-step target the exact conditional whenever it
    factorizes over dimensions.
    """
    states, fields = _guard_chain(prior, s)
    if likelihood_weight is None:
        if prob.sigma_eta <= 0:
            raise ValueError("The default likelihood weight needs sigma_eta > 0.")
        likelihood_weight = 1.0 / (2.0 * prob.sigma_eta**2)
    K, d_z = prior.K, prior.d_z
    rows = np.arange(d_z)[None, :]
    sq_residuals = np.array(
        [np.sum(prob.residual(hard_decode(cb, dec, TokenField(f, K))) ** 2) for f in fields]
    )
    log_weights = -likelihood_weight * sq_residuals
    joint = prior.probs()

    start = CategoricalField(terminal_distribution(s, prior.marginals()))
    dist = np.prod(start.probs[rows, states], axis=1)
    clean = np.zeros(fields.shape[0])
    for t in range(s.T, 0, -1):
        cond = _conditionals(forward_matrix(s, t, states, fields), joint)
        Q_prev = cumulative_matrix(s, t - 1)[:, :K]
        upcoming = np.zeros(states.shape[0])
        for r in np.flatnonzero(dist > 0):
            if cond[r].sum() <= 0:
                raise ScheduleError(f"Noisy state {states[r]} is unreachable at step {t}.")
            prior_out = joint_marginals(cond[r], fields, K)
            alpha = mean_field_optimum(prior_out, fields, log_weights, eta_kl).probs
            if t == 1:
                clean += dist[r] * np.prod(alpha[rows, fields], axis=1)
            else:
                kernel = alpha @ Q_prev.T
                upcoming += dist[r] * np.prod(kernel[rows, states], axis=1)
        dist = upcoming
    return EnumeratedPosterior(clean / clean.sum(), K, d_z)


def random_variational_parameters(
    rng: np.random.Generator,
    T: int,
    K: int,
    d_z: int,
    concentration: float = 1.0,
    degenerate: bool = False,
) -> np.ndarray:
    """Random alpha sets of shape (T, (K+1)**d_z, d_z, K); ``degenerate`` gives point masses."""
    shape = (T, (K + 1) ** d_z, d_z)
    if degenerate:
        return np.eye(K)[rng.integers(0, K, size=shape)]
    return rng.dirichlet(np.full(K, concentration), size=shape)


def check_lemma1_decomposition(
    alpha_field: CategoricalField,
    prior_out_exact: Union[TabularJointPrior, np.ndarray],
    prob: LinearProblem,
    cb: Codebook,
    dec: Decoder,
    s: TransitionSchedule,
    t: int,
    zt: TokenField,
) -> Tuple[float, float, float]:
    """Split KL(alpha || q(z_0 | z_t, y)) into a prior KL, a likelihood term and a normalizer.

    ``prior_out_exact`` is either the joint prior (q(z_0 | z_t) is computed from it)
    or q(z_0 | z_t) itself over the enumerated support. Returns
    ``(lhs, rhs, log_normalizer)`` with

    lhs = KL(alpha || q(z_0 | z_t, y))
    rhs = KL(alpha || q(z_0 | z_t)) - E_alpha[log q(y | z_0)] + log q(y | z_t)

    and ``log_normalizer = log q(y | z_t)``, Gaussian constant included.
    """
    K, d_z = alpha_field.K, alpha_field.d_z
    check_enumeration("check_lemma1_decomposition", K**d_z)
    fields = enumerate_fields(K, d_z)
    if isinstance(prior_out_exact, TabularJointPrior):
        cond = exact_conditional(prior_out_exact, s, t, zt)
    else:
        s.check_step(t)
        cond = np.asarray(prior_out_exact, dtype=float).ravel()
        if cond.size != fields.shape[0] or abs(cond.sum() - 1.0) > 1e-10:
            raise ValueError("q(z_0 | z_t) must be a normalized vector over the K**d_z fields.")

    approx = alpha_field.joint(fields)
    loglik = clean_log_likelihoods(fields, cb, dec, prob, normalized=True)
    log_cond = safe_log(cond)
    log_normalizer = float(logsumexp(loglik + log_cond))
    log_post = loglik + log_cond - log_normalizer

    support = approx > 0
    a = approx[support]
    entropy_term = float(np.sum(a * np.log(a)))
    lhs = entropy_term - float(np.sum(a * log_post[support]))
    prior_kl = entropy_term - float(np.sum(a * log_cond[support]))
    expected_loglik = float(np.sum(a * loglik[support]))
    rhs = prior_kl - expected_loglik + log_normalizer
    return lhs, rhs, log_normalizer


@dataclass(frozen=True)
class TinyInstance:
    """A fully specified enumerable problem with its ground truth."""

    prior: TabularJointPrior
    schedule: TransitionSchedule
    codebook: Codebook
    decoder: Decoder
    problem: LinearProblem
    z0: TokenField


OperatorName = Literal["identity", "inpainting", "downsample", "blur", "zero"]


def random_schedule(rng: np.random.Generator, T: int, K: int, attempts: int = 200) -> TransitionSchedule:
    """Random valid endpoints; redraws until every recovered per-step beta is non-negative."""
    for _ in range(attempts):
        try:
            return build_schedule(
                T,
                K,
                alpha_bar_1=rng.uniform(0.5, 0.9),
                alpha_bar_T=rng.uniform(0.01, 0.2),
                gamma_bar_1=rng.uniform(0.01, 0.08),
                gamma_bar_T=rng.uniform(0.5, 0.78),
            )
        except ScheduleError:
            continue
    raise ScheduleError(f"No valid random schedule for T={T}, K={K} after {attempts} draws.")


def random_operator(rng: np.random.Generator, name: OperatorName, d_x0: int) -> LinearOperator:
    if name == "identity":
        return IdentityOperator(d_x0)
    if name == "inpainting":
        n_kept = max(1, d_x0 // 2)
        return MaskingOperator(d_x0, rng.choice(d_x0, size=n_kept, replace=False))
    if name == "downsample":
        factor = 2 if d_x0 % 2 == 0 else d_x0
        return DownsampleOperator(d_x0, factor)
    if name == "blur":
        return BlurOperator(d_x0, length=3 if d_x0 >= 3 else 1, std=1.0)
    if name == "zero":
        return MatrixOperator(np.zeros((d_x0, d_x0)))
    raise ValueError(f"Unknown operator {name!r}.")


def random_instance(
    rng: np.random.Generator,
    K: int = 2,
    d_z: int = 2,
    T: int = 3,
    d_b: int = 2,
    sigma_eta: float = 0.5,
    operator: OperatorName = "identity",
    product_form: bool = False,
    schedule: Optional[TransitionSchedule] = None,
) -> TinyInstance:
    """Draw prior, schedule, codebook, decoder, ground truth and measurement.

    With ``product_form`` the prior is independent across dimensions and the
    decoder is the identity on stacked embeddings, so for identity or masking
    operators every exact conditional q(z_0 | z_t, y) factorizes.
    """
    s = schedule if schedule is not None else random_schedule(rng, T, K)
    cb = random_codebook(rng, K, d_b)
    if product_form:
        prior = independent_prior(rng.dirichlet(np.full(K, 2.0), size=d_z))
        dec: Decoder = LinearDecoder.identity(d_z, d_b)
    else:
        prior = dirichlet_prior(K, d_z, rng, concentration=1.0)
        dec = random_linear_decoder(rng, d_z, d_b, d_x0=d_z * d_b)
    z0 = prior.sample(rng)
    op = random_operator(rng, operator, dec.d_x0)
    prob = simulate_measurement(MeasurementModel(op, sigma_eta), hard_decode(cb, dec, z0), rng)
    return TinyInstance(prior, s, cb, dec, prob, z0)
