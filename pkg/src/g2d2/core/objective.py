"""Per-step variational objective and its analytic gradient in the logits.

    loss = eta_kl * KL(alpha || prior_out)
         + likelihood_weight * mean_g || y - A D(softmax((log alpha + g) / tau) B) ||^2

with ``alpha = softmax(logits)`` row-wise. The ``norm`` likelihood form drops the square.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from g2d2.core.decoder import Codebook, Decoder, gumbel_softmax, sample_gumbel
from g2d2.core.errors import NonFiniteError
from g2d2.core.operators import LinearProblem
from g2d2.core.types import CategoricalField
from g2d2.utils.numerics import LOG_FLOOR, clamped_log, row_log_softmax

Noise = Union[np.random.Generator, np.ndarray]
FieldLike = Union[CategoricalField, np.ndarray]


class ObjectiveConfig(BaseModel):
    """Weights and Monte-Carlo settings of the per-step loss."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    eta_kl: float = Field(1.0, ge=0.0, description="Weight of the KL-to-prior term")
    tau: float = Field(1.0, gt=0.0, description="Gumbel-Softmax temperature")
    n_mc: int = Field(1, ge=1, description="Gumbel draws per loss evaluation")
    likelihood_weight: float = Field(1.0, ge=0.0)
    likelihood_form: Literal["squared", "norm"] = "squared"


@dataclass(frozen=True)
class ObjectiveTerms:
    kl: float
    likelihood: float
    total: float


def _probs(field: FieldLike) -> np.ndarray:
    if isinstance(field, CategoricalField):
        return field.probs
    return np.asarray(field, dtype=float)


def kl_categorical_fields(p: FieldLike, q: FieldLike) -> float:
    """Sum over dimensions of KL(p_i || q_i); log q is floored at LOG_FLOOR."""
    p_arr, q_arr = _probs(p), _probs(q)
    if p_arr.shape != q_arr.shape:
        raise ValueError(f"KL needs matching shapes, got {p_arr.shape} and {q_arr.shape}.")
    support = p_arr > 0
    p_s = p_arr[support]
    return float(np.sum(p_s * (np.log(p_s) - clamped_log(q_arr)[support])))


def draw_gumbel(rng: np.random.Generator, cfg: ObjectiveConfig, d_z: int, K: int) -> np.ndarray:
    """Common random numbers for one optimizer iteration: shape (n_mc, d_z, K)."""
    return sample_gumbel(rng, (cfg.n_mc, d_z, K))


def _gumbel(noise: Noise, cfg: ObjectiveConfig, d_z: int, K: int) -> np.ndarray:
    if isinstance(noise, np.random.Generator):
        return draw_gumbel(noise, cfg, d_z, K)
    g = np.asarray(noise, dtype=float)
    if g.shape == (d_z, K):
        g = g[None]
    if g.ndim != 3 or g.shape[1:] != (d_z, K):
        raise ValueError(f"Gumbel draws must have shape (n, {d_z}, {K}), got {g.shape}.")
    return g


def _evaluate(
    logits: np.ndarray,
    prior_out: FieldLike,
    prob: LinearProblem,
    cb: Codebook,
    dec: Decoder,
    cfg: ObjectiveConfig,
    noise: Noise,
    with_grad: bool,
) -> Tuple[ObjectiveTerms, np.ndarray]:
    logits = np.asarray(logits, dtype=float)
    prior = _probs(prior_out)
    d_z, K = logits.shape
    if prior.shape != (d_z, K) or cb.K != K or dec.d_z != d_z:
        raise ValueError("logits, prior_out, codebook and decoder disagree on d_z or K.")
    g = _gumbel(noise, cfg, d_z, K)

    log_alpha = row_log_softmax(logits)
    alpha = np.exp(log_alpha)
    log_prior = clamped_log(prior)

    row_kl = np.sum(alpha * (log_alpha - log_prior), axis=1)
    kl = float(row_kl.sum())
    grad = np.zeros_like(logits)
    if with_grad and cfg.eta_kl > 0:
        grad += cfg.eta_kl * alpha * (log_alpha - log_prior - row_kl[:, None])

    likelihood = 0.0
    if cfg.likelihood_weight > 0:
        # d loss / d (clamped log alpha), accumulated over draws
        grad_log_alpha = np.zeros_like(logits)
        for draw in g:
            z_soft = gumbel_softmax(log_alpha, draw, cfg.tau)
            Z = z_soft @ cb.vectors
            residual = prob.residual(dec.forward(Z))
            norm = float(np.linalg.norm(residual))
            if cfg.likelihood_form == "squared":
                likelihood += norm**2
                grad_x = -2.0 * prob.op.adjoint(residual)
            else:
                likelihood += norm
                grad_x = -prob.op.adjoint(residual) / norm if norm > 0 else np.zeros(dec.d_x0)
            if not with_grad:
                continue
            grad_z_soft = dec.vjp(Z, grad_x) @ cb.vectors.T
            centred = grad_z_soft - np.sum(z_soft * grad_z_soft, axis=1, keepdims=True)
            grad_log_alpha += z_soft * centred / cfg.tau
        likelihood /= len(g)
        if with_grad:
            grad_log_alpha *= cfg.likelihood_weight / len(g)
            grad_log_alpha *= log_alpha > LOG_FLOOR
            grad += grad_log_alpha - alpha * grad_log_alpha.sum(axis=1, keepdims=True)

    total = cfg.eta_kl * kl + cfg.likelihood_weight * likelihood
    if not np.isfinite(total) or (with_grad and not np.all(np.isfinite(grad))):
        raise NonFiniteError(
            "Objective produced a non-finite value.",
            state={"logits": logits.copy(), "kl": kl, "likelihood": likelihood},
        )
    return ObjectiveTerms(kl=kl, likelihood=likelihood, total=float(total)), grad


def loss(
    logits: np.ndarray,
    prior_out: FieldLike,
    prob: LinearProblem,
    cb: Codebook,
    dec: Decoder,
    cfg: ObjectiveConfig,
    noise: Noise,
) -> float:
    """Objective value; ``noise`` is a generator (fresh draws) or explicit Gumbel draws."""
    return _evaluate(logits, prior_out, prob, cb, dec, cfg, noise, with_grad=False)[0].total


def loss_terms(
    logits: np.ndarray,
    prior_out: FieldLike,
    prob: LinearProblem,
    cb: Codebook,
    dec: Decoder,
    cfg: ObjectiveConfig,
    noise: Noise,
) -> ObjectiveTerms:
    return _evaluate(logits, prior_out, prob, cb, dec, cfg, noise, with_grad=False)[0]


def loss_gradient(
    logits: np.ndarray,
    prior_out: FieldLike,
    prob: LinearProblem,
    cb: Codebook,
    dec: Decoder,
    cfg: ObjectiveConfig,
    noise: Noise,
) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to ``logits``.

    Pass the same Gumbel array used for the loss; a generator draws fresh noise.
    """
    return _evaluate(logits, prior_out, prob, cb, dec, cfg, noise, with_grad=True)[1]


def loss_and_gradient(
    logits: np.ndarray,
    prior_out: FieldLike,
    prob: LinearProblem,
    cb: Codebook,
    dec: Decoder,
    cfg: ObjectiveConfig,
    noise: Noise,
) -> Tuple[float, np.ndarray]:
    terms, grad = _evaluate(logits, prior_out, prob, cb, dec, cfg, noise, with_grad=True)
    return terms.total, grad


def numerical_gradient(
    logits: np.ndarray,
    prior_out: FieldLike,
    prob: LinearProblem,
    cb: Codebook,
    dec: Decoder,
    cfg: ObjectiveConfig,
    g: np.ndarray,
    delta: float = 1e-5,
) -> np.ndarray:
    """Central differences of :func:`loss` with the Gumbel draws ``g`` held fixed."""
    x = np.array(logits, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + delta
        upper = loss(x, prior_out, prob, cb, dec, cfg, g)
        x.flat[i] = orig - delta
        lower = loss(x, prior_out, prob, cb, dec, cfg, g)
        x.flat[i] = orig
        grad.flat[i] = (upper - lower) / (2.0 * delta)
    return grad


def gradient_relative_error(
    logits: np.ndarray,
    prior_out: FieldLike,
    prob: LinearProblem,
    cb: Codebook,
    dec: Decoder,
    cfg: ObjectiveConfig,
    g: np.ndarray,
    delta: float = 1e-5,
) -> float:
    """||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, 1e-8)."""
    analytic = loss_gradient(logits, prior_out, prob, cb, dec, cfg, g)
    numeric = numerical_gradient(logits, prior_out, prob, cb, dec, cfg, g, delta)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)
