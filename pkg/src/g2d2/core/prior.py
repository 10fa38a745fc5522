"""Denoising priors p(z_0 | z_t): exact tabular Bayes plus pluggable stand-ins."""
from __future__ import annotations

import abc
import logging
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from g2d2.core.noise_process import TransitionSchedule, cumulative_matrix
from g2d2.core.types import CategoricalField, TokenField
from g2d2.utils.numerics import (
    check_enumeration,
    enumerate_fields,
    field_index,
    sample_categorical,
)

logger = logging.getLogger(__name__)

_NORMALIZATION_TOL = 1e-10


class TabularJointPrior:
    """An explicitly enumerated joint q(z_0) over all K**d_z clean token fields."""

    def __init__(self, log_table: np.ndarray, K: int, d_z: int):
        check_enumeration("TabularJointPrior", K**d_z)
        log_table = np.asarray(log_table, dtype=float).ravel()
        if log_table.size != K**d_z:
            raise ValueError(f"Joint table needs {K**d_z} entries, got {log_table.size}.")
        if np.any(np.isnan(log_table)) or np.any(log_table == np.inf):
            raise ValueError("Joint table log-probabilities must not be NaN or +inf.")
        total = logsumexp(log_table)
        if abs(total) > _NORMALIZATION_TOL:
            raise ValueError(f"Joint table must be normalized (log-sum {total:.3g}).")
        self.K = K
        self.d_z = d_z
        self._log_table = log_table - total
        self._log_table.setflags(write=False)
        self._fields = enumerate_fields(K, d_z)
        self._fields.setflags(write=False)

    @classmethod
    def from_table(cls, table: np.ndarray, K: int, d_z: int) -> "TabularJointPrior":
        """Build from non-negative weights; they are normalized here."""
        table = np.asarray(table, dtype=float).ravel()
        if np.any(table < 0) or table.sum() <= 0:
            raise ValueError("Joint table weights must be non-negative with positive sum.")
        with np.errstate(divide="ignore"):
            log_table = np.log(table / table.sum())
        return cls(log_table - logsumexp(log_table), K, d_z)

    @property
    def fields(self) -> np.ndarray:
        """Enumerated support, row r is the field with flat index r."""
        return self._fields

    def log_probs(self) -> np.ndarray:
        return self._log_table

    def probs(self) -> np.ndarray:
        return np.exp(self._log_table)

    def logprob(self, field: TokenField) -> float:
        if field.K != self.K or field.d_z != self.d_z:
            raise ValueError("Token field does not match the prior's K and d_z.")
        if not field.is_clean:
            raise ValueError("The data distribution only covers unmasked fields.")
        return float(self._log_table[field_index(field.tokens, self.K)])

    def marginals(self) -> CategoricalField:
        return joint_marginals(self.probs(), self._fields, self.K)

    def sample(self, rng: np.random.Generator) -> TokenField:
        index = int(sample_categorical(self.probs()[None, :], rng)[0])
        return TokenField(self._fields[index], self.K)


def joint_marginals(weights: np.ndarray, fields: np.ndarray, K: int) -> CategoricalField:
    """Per-dimension marginals of a distribution over enumerated fields."""
    weights = np.asarray(weights, dtype=float)
    rows = np.stack(
        [np.bincount(fields[:, i], weights=weights, minlength=K) for i in range(fields.shape[1])]
    )
    return CategoricalField(rows / rows.sum(axis=1, keepdims=True))


def independent_prior(rows: np.ndarray) -> TabularJointPrior:
    """Product of per-dimension categoricals (mean-field is exact for this prior)."""
    marginals = CategoricalField(np.asarray(rows, dtype=float))
    d_z, K = marginals.probs.shape
    fields = enumerate_fields(K, d_z)
    with np.errstate(divide="ignore"):
        log_rows = np.log(marginals.probs)
    log_table = log_rows[np.arange(d_z)[None, :], fields].sum(axis=1)
    return TabularJointPrior(log_table - logsumexp(log_table), K, d_z)


def markov_chain_prior(
    K: int,
    d_z: int,
    coupling: float,
    initial: Optional[np.ndarray] = None,
) -> TabularJointPrior:
    """Chain over dimensions: q(z_{0,i} | z_{0,i-1}) proportional to exp(coupling * [equal]).

    Positive coupling favours repeated neighbouring tokens, so per-dimension
    marginals lose the cross-dimension dependency.
    """
    if initial is None:
        initial = np.full(K, 1.0 / K)
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (K,) or np.any(initial < 0) or not np.isclose(initial.sum(), 1.0):
        raise ValueError("initial must be a length-K probability vector.")
    transition = np.exp(coupling * np.eye(K))
    transition /= transition.sum(axis=1, keepdims=True)
    fields = enumerate_fields(K, d_z)
    with np.errstate(divide="ignore"):
        log_table = np.log(initial)[fields[:, 0]]
        log_transition = np.log(transition)
    for i in range(1, d_z):
        log_table = log_table + log_transition[fields[:, i - 1], fields[:, i]]
    return TabularJointPrior(log_table - logsumexp(log_table), K, d_z)


def dirichlet_prior(
    K: int, d_z: int, rng: np.random.Generator, concentration: float = 1.0
) -> TabularJointPrior:
    """Random joint table with Dirichlet(concentration) weights over the full support."""
    check_enumeration("dirichlet_prior", K**d_z)
    table = rng.dirichlet(np.full(K**d_z, concentration))
    return TabularJointPrior.from_table(np.maximum(table, 1e-300), K, d_z)


def _clean_log_likelihood(
    s: TransitionSchedule, t: int, zt: TokenField, fields: np.ndarray
) -> np.ndarray:
    """log q(z_t | z_0) for every enumerated clean field (product over dimensions)."""
    Q = cumulative_matrix(s, t)
    with np.errstate(divide="ignore"):
        log_q = np.log(Q[zt.tokens[None, :], fields])
    return log_q.sum(axis=1)


def exact_conditional(prior: TabularJointPrior, s: TransitionSchedule, t: int, zt: TokenField) -> np.ndarray:
    """Joint q(z_0 | z_t) over the prior's enumerated support."""
    s.check_step(t)
    if zt.K != prior.K or zt.d_z != prior.d_z or s.K != prior.K:
        raise ValueError("Prior, schedule and z_t disagree on K or d_z.")
    log_post = _clean_log_likelihood(s, t, zt, prior.fields) + prior.log_probs()
    norm = logsumexp(log_post)
    if not np.isfinite(norm):
        raise ValueError(f"z_t={zt!r} has zero probability under the prior at step {t}.")
    return np.exp(log_post - norm)


def exact_denoiser(prior: TabularJointPrior, s: TransitionSchedule, t: int, zt: TokenField) -> CategoricalField:
    """Per-dimension marginals of the exact q(z_0 | z_t) (the mean-field projection)."""
    return joint_marginals(exact_conditional(prior, s, t, zt), prior.fields, prior.K)


class DenoisingPrior(abc.ABC):
    """A clean-token predictor p(z_0 | z_t) with mean-field output."""

    K: int
    d_z: int

    @abc.abstractmethod
    def predict(self, zt: TokenField, t: int) -> CategoricalField:
        """Return d_z independent categoricals over the K unmasked tokens."""


class TabularDenoiser(DenoisingPrior):
    """Exact Bayes denoiser over a tabular joint prior, memoized per (t, z_t)."""

    def __init__(self, prior: TabularJointPrior, schedule: TransitionSchedule, cache_size: int = 4096):
        if schedule.K != prior.K:
            raise ValueError(f"Schedule K={schedule.K} does not match prior K={prior.K}.")
        self.prior = prior
        self.schedule = schedule
        self.K = prior.K
        self.d_z = prior.d_z
        self._cache: Dict[Tuple[int, TokenField], CategoricalField] = {}
        self._cache_size = cache_size

    def predict(self, zt: TokenField, t: int) -> CategoricalField:
        key = (t, zt)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        out = exact_denoiser(self.prior, self.schedule, t, zt)
        if len(self._cache) < self._cache_size:
            self._cache[key] = out
        return out


class UniformDenoiser(DenoisingPrior):
    def __init__(self, d_z: int, K: int):
        self.K = K
        self.d_z = d_z
        self._field = CategoricalField.uniform(d_z, K)

    def predict(self, zt: TokenField, t: int) -> CategoricalField:
        return self._field


class ProductMarginalDenoiser(DenoisingPrior):
    """Ignores z_t and always returns the stored rows."""

    def __init__(self, rows: np.ndarray):
        self._field = CategoricalField(np.asarray(rows, dtype=float))
        self.d_z, self.K = self._field.probs.shape

    def predict(self, zt: TokenField, t: int) -> CategoricalField:
        return self._field
