"""Mask-absorbing transition schedules, forward sampling and the two reverse kernels.

Matrices follow the column convention ``M[to, from]``: column ``i`` of ``Q_t`` is the
distribution of ``z_t`` given ``z_{t-1} = i``, so every column sums to one.
Index ``K`` is the MASK state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from g2d2.core.errors import ScheduleError
from g2d2.core.types import ROW_SUM_TOL, CategoricalField, TokenField
from g2d2.utils.numerics import sample_categorical

logger = logging.getLogger(__name__)

# Default endpoints: near-clean at t = 1, near-all-MASK at t = T.
DEFAULT_ENDPOINTS = (0.99999, 0.000009, 0.000009, 0.99999)

# Recovered per-step beta below this is treated as zero rounding noise.
_BETA_ROUNDING = 1e-12

# Terminal MASK mass below which z_T still carries token information.
TERMINAL_MASK_FLOOR = 0.99


@dataclass(frozen=True)
class TransitionSchedule:
    """Cumulative (and recovered per-step) parameters for steps ``1..T``.

    ``gamma_bar`` is the MASK mass of the closed-form cumulative row, i.e. the
    interpolated ``gamma_bar_raw`` plus the ``beta_bar`` residual that the
    ``(K + 1)`` divisor leaves unassigned. With it ``alpha_bar + K * beta_bar +
    gamma_bar == 1`` holds for every step.
    """

    T: int
    K: int
    alpha_bar: np.ndarray
    beta_bar: np.ndarray
    gamma_bar: np.ndarray
    gamma_bar_raw: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    @property
    def mask_token(self) -> int:
        return self.K

    def check_step(self, t: int, lowest: int = 1) -> None:
        if not isinstance(t, (int, np.integer)) or t < lowest or t > self.T:
            raise ScheduleError(f"Step t={t} outside [{lowest}, {self.T}].")

    def cumulative(self, t: int) -> Tuple[float, float, float]:
        """(alpha_bar_t, beta_bar_t, gamma_bar_t); step 0 is the identity (1, 0, 0)."""
        self.check_step(t, lowest=0)
        if t == 0:
            return 1.0, 0.0, 0.0
        i = t - 1
        return float(self.alpha_bar[i]), float(self.beta_bar[i]), float(self.gamma_bar[i])

    def per_step(self, t: int) -> Tuple[float, float, float]:
        """Recovered (alpha_t, beta_t, gamma_t) of the single-step kernel ``Q_t``."""
        self.check_step(t)
        i = t - 1
        return float(self.alpha[i]), float(self.beta[i]), float(self.gamma[i])

    @property
    def terminal_is_masked(self) -> bool:
        """Whether z_T is all MASK up to TERMINAL_MASK_FLOOR."""
        return bool(self.gamma_bar[-1] >= TERMINAL_MASK_FLOOR)


def _linear(start: float, end: float, T: int) -> np.ndarray:
    if T == 1:
        return np.array([start], dtype=float)
    return start + (end - start) * np.arange(T, dtype=float) / (T - 1)


def build_schedule(
    T: int,
    K: int,
    alpha_bar_1: float = DEFAULT_ENDPOINTS[0],
    alpha_bar_T: float = DEFAULT_ENDPOINTS[1],
    gamma_bar_1: float = DEFAULT_ENDPOINTS[2],
    gamma_bar_T: float = DEFAULT_ENDPOINTS[3],
) -> TransitionSchedule:
    """Linearly interpolate ``alpha_bar`` and ``gamma_bar`` between steps 1 and T."""
    if T < 1:
        raise ScheduleError(f"Step count T must be at least 1, got {T}.")
    if K < 1:
        raise ScheduleError(f"Codebook size K must be at least 1, got {K}.")
    endpoints = {
        "alpha_bar_1": alpha_bar_1,
        "alpha_bar_T": alpha_bar_T,
        "gamma_bar_1": gamma_bar_1,
        "gamma_bar_T": gamma_bar_T,
    }
    for name, value in endpoints.items():
        if not 0.0 < value < 1.0:
            raise ScheduleError(f"{name}={value} must lie strictly inside (0, 1).")
    if T == 1:
        # the only step is also the terminal one
        alpha_bar_1, gamma_bar_1 = alpha_bar_T, gamma_bar_T
    else:
        if not alpha_bar_1 > alpha_bar_T:
            raise ScheduleError("alpha_bar must decrease: alpha_bar_1 > alpha_bar_T is required.")
        if not gamma_bar_1 < gamma_bar_T:
            raise ScheduleError("gamma_bar must increase: gamma_bar_1 < gamma_bar_T is required.")

    alpha_bar = _linear(alpha_bar_1, alpha_bar_T, T)
    gamma_raw = _linear(gamma_bar_1, gamma_bar_T, T)
    leftover = 1.0 - alpha_bar - gamma_raw
    if np.any(leftover <= 0.0):
        worst = int(np.argmin(leftover)) + 1
        raise ScheduleError(
            f"alpha_bar + gamma_bar must stay below 1; step {worst} gives {1.0 - leftover[worst - 1]:.12g}."
        )
    beta_bar = leftover / (K + 1)
    gamma_bar = gamma_raw + beta_bar
    logger.debug(
        "Schedule T=%d K=%d: absorbed up to %.3g of residual mass into MASK", T, K, beta_bar.max()
    )

    prev_alpha = np.concatenate([[1.0], alpha_bar[:-1]])
    prev_keep = np.concatenate([[1.0], 1.0 - gamma_bar[:-1]])
    alpha = alpha_bar / prev_alpha
    gamma = 1.0 - (1.0 - gamma_bar) / prev_keep
    beta = (1.0 - alpha - gamma) / K
    if np.any(alpha < 0.0) or np.any(alpha > 1.0) or np.any(gamma < 0.0) or np.any(gamma > 1.0):
        raise ScheduleError("Recovered per-step alpha_t or gamma_t fall outside [0, 1].")
    if np.any(beta < -_BETA_ROUNDING):
        worst = int(np.argmin(beta)) + 1
        raise ScheduleError(
            f"Endpoints yield a negative per-step beta_t at step {worst} ({beta[worst - 1]:.3g})."
        )
    beta = np.maximum(beta, 0.0)

    arrays = (alpha_bar, beta_bar, gamma_bar, gamma_raw, alpha, beta, gamma)
    for array in arrays:
        array.setflags(write=False)
    return TransitionSchedule(T, K, *arrays)


def _assemble(K: int, a: float, b: float, g: float) -> np.ndarray:
    Q = np.zeros((K + 1, K + 1))
    Q[:K, :K] = b
    Q[np.arange(K), np.arange(K)] += a
    Q[K, :K] = g
    Q[K, K] = 1.0
    return Q


def cumulative_matrix(s: TransitionSchedule, t: int) -> np.ndarray:
    """Closed-form ``Q_bar_t`` for ``0 <= t <= T`` (identity at t = 0).

    Column ``k < K`` equals :func:`cumulative_forward_dist` for token ``k``.
    """
    return _assemble(s.K, *s.cumulative(t))


def cumulative_forward_dist(s: TransitionSchedule, t: int, z0_token: int) -> np.ndarray:
    """q(z_t | z_0 = z0_token) over the K+1 states."""
    s.check_step(t)
    if not 0 <= z0_token < s.K:
        raise ScheduleError(f"The forward process starts from a clean token; got {z0_token}.")
    a, b, g = s.cumulative(t)
    dist = np.full(s.K + 1, b)
    dist[z0_token] += a
    dist[s.K] = g
    return dist


def terminal_distribution(s: TransitionSchedule, clean: CategoricalField) -> np.ndarray:
    """Per-dimension q(z_T) = sum_k clean_k * q(z_T | z_0 = k), shape (d_z, K+1).

    ``clean`` is the per-dimension distribution of z_0, e.g. the denoiser output
    for an all-MASK z_T, which equals the prior marginals.
    """
    probs = _check_alpha(s, clean)
    return probs @ cumulative_matrix(s, s.T)[:, : s.K].T


def single_step_matrix(s: TransitionSchedule, t: int) -> np.ndarray:
    s.check_step(t)
    a, b, g = s.per_step(t)
    if not (0.0 <= a <= 1.0 and 0.0 <= g <= 1.0):
        raise ScheduleError(f"Step {t} has per-step parameters outside [0, 1].")
    return _assemble(s.K, a, b, g)


def sample_zt_given_z0(
    s: TransitionSchedule, t: int, z0: TokenField, rng: np.random.Generator
) -> TokenField:
    s.check_step(t)
    if z0.K != s.K:
        raise ScheduleError(f"Token field has K={z0.K}, schedule has K={s.K}.")
    if not z0.is_clean:
        raise ScheduleError("sample_zt_given_z0 needs a fully unmasked z_0.")
    Q = cumulative_matrix(s, t)
    return TokenField(sample_categorical(Q[:, z0.tokens].T, rng), s.K)


def markov_posterior(s: TransitionSchedule, t: int, z0_token: int, zt_token: int) -> np.ndarray:
    """q(z_{t-1} | z_0, z_t) of the Markov absorbing process."""
    s.check_step(t, lowest=2)
    if not 0 <= z0_token < s.K:
        raise ScheduleError(f"z0_token must be unmasked; got {z0_token}.")
    if not 0 <= zt_token <= s.K:
        raise ScheduleError(f"zt_token={zt_token} outside [0, {s.K}].")
    Q_t = single_step_matrix(s, t)
    prev = cumulative_matrix(s, t - 1)[:, z0_token]
    numerator = Q_t[zt_token, :] * prev
    denominator = cumulative_matrix(s, t)[zt_token, z0_token]
    if denominator <= 0.0 or numerator.sum() <= 0.0:
        raise ScheduleError(
            f"z_t={zt_token} is unreachable from z_0={z0_token} at step {t}."
        )
    return numerator / numerator.sum()


def _check_alpha(s: TransitionSchedule, alpha_field: CategoricalField) -> np.ndarray:
    probs = alpha_field.probs
    if probs.shape[1] != s.K:
        raise ScheduleError(f"alpha_field has {probs.shape[1]} columns, schedule has K={s.K}.")
    if np.max(np.abs(probs.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise ScheduleError("alpha_field rows must be normalized.")
    return probs


def star_reverse_kernel(
    s: TransitionSchedule, t: int, alpha_field: CategoricalField
) -> np.ndarray:
    """Per-dimension distribution of z_{t-1}: sum_k alpha_k * q(z_{t-1} | z_0 = k).

    At t = 1 this is the clean categorical alpha with a zero MASK column.
    """
    s.check_step(t)
    probs = _check_alpha(s, alpha_field)
    if t == 1:
        return alpha_field.padded()
    Q_prev = cumulative_matrix(s, t - 1)
    return probs @ Q_prev[:, : s.K].T


def markov_reverse_kernel(
    s: TransitionSchedule, t: int, alpha_field: CategoricalField, zt: TokenField
) -> np.ndarray:
    """Per-dimension sum_k alpha_k * q(z_{t-1} | z_0 = k, z_t).

    Candidates ``k`` from which ``z_t`` is unreachable carry no weight; the
    remaining alpha mass is renormalized.
    """
    s.check_step(t)
    probs = _check_alpha(s, alpha_field)
    if zt.d_z != probs.shape[0]:
        raise ScheduleError(f"z_t has d_z={zt.d_z}, alpha_field has {probs.shape[0]} rows.")
    if t == 1:
        return alpha_field.padded()
    K = s.K
    Q_t = single_step_matrix(s, t)
    Q_prev = cumulative_matrix(s, t - 1)[:, :K]
    Q_bar = cumulative_matrix(s, t)
    out = np.empty((probs.shape[0], K + 1))
    for i, j in enumerate(zt.tokens):
        # rows: candidate z_0 = k, columns: z_{t-1}
        joint = Q_prev.T * Q_t[j, :][None, :]
        norm = joint.sum(axis=1)
        reachable = (Q_bar[j, :K] > 0.0) & (norm > 0.0)
        weights = probs[i] * reachable
        if weights.sum() <= 0.0:
            raise ScheduleError(
                f"z_t={int(j)} in dimension {i} is unreachable from every z_0 with positive alpha."
            )
        posterior = joint[reachable] / norm[reachable][:, None]
        out[i] = weights[reachable] @ posterior / weights.sum()
    return out
