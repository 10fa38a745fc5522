"""Rectified Adam and the log-decay weights for learning rate and KL coefficient."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from g2d2.core.errors import NonFiniteError

# Steps whose rectification length is at or below this use the momentum-only update.
RECTIFICATION_THRESHOLD = 4.0


@dataclass(frozen=True)
class RAdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(
        cls, params: np.ndarray, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> "RAdamState":
        if not (0.0 <= beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError(f"Moment decays must lie in [0, 1), got {beta1}, {beta2}.")
        params = np.asarray(params, dtype=float)
        return cls(0, np.zeros_like(params), np.zeros_like(params), beta1, beta2, eps)


class ScheduleParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_lr: float = 0.0
    lambda_kl: float = 0.0
    T: int = Field(..., ge=1)


def rho_infinity(beta2: float) -> float:
    return 2.0 / (1.0 - beta2) - 1.0


def rectification_length(step: int, beta2: float = 0.999) -> float:
    """rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t) for step t >= 1."""
    if step < 1:
        raise ValueError(f"Rectification length is defined for steps >= 1, got {step}.")
    decay = beta2**step
    return rho_infinity(beta2) - 2.0 * step * decay / (1.0 - decay)


def _moments(state: RAdamState, params: np.ndarray, grad: np.ndarray) -> Tuple[RAdamState, np.ndarray]:
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape or np.shape(params) != state.m.shape:
        raise ValueError(f"Gradient shape {grad.shape} does not match optimizer state {state.m.shape}.")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("Optimizer received a non-finite gradient.", state={"step": state.step + 1})
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    return replace(state, step=state.step + 1, m=m, v=v), grad


def radam_step(
    state: RAdamState, params: np.ndarray, grad: np.ndarray, lr: float
) -> Tuple[RAdamState, np.ndarray]:
    """One rectified-Adam update; returns the new state and new parameters.

    While the rectification length is at most 4 the adaptive term is undefined and
    the update falls back to bias-corrected momentum.
    """
    new, _ = _moments(state, params, grad)
    t = new.step
    m_hat = new.m / (1.0 - new.beta1**t)
    rho_inf = rho_infinity(new.beta2)
    rho_t = rectification_length(t, new.beta2)
    if rho_t > RECTIFICATION_THRESHOLD:
        v_hat = np.sqrt(new.v / (1.0 - new.beta2**t))
        r_t = np.sqrt(
            (rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
        update = r_t * m_hat / (v_hat + new.eps)
    else:
        update = m_hat
    return new, np.asarray(params, dtype=float) - lr * update


def adam_step(
    state: RAdamState, params: np.ndarray, grad: np.ndarray, lr: float
) -> Tuple[RAdamState, np.ndarray]:
    new, _ = _moments(state, params, grad)
    t = new.step
    m_hat = new.m / (1.0 - new.beta1**t)
    v_hat = new.v / (1.0 - new.beta2**t)
    return new, np.asarray(params, dtype=float) - lr * m_hat / (np.sqrt(v_hat) + new.eps)


def schedule_weight(t: float, T: int, lam: float) -> float:
    """10 ** ((lam / 2) * (2 t / T - 1)); equals 1 at t = T / 2."""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}.")
    return float(10.0 ** ((lam / 2.0) * (2.0 * t / T - 1.0)))


def effective_settings(
    t: int, params: ScheduleParams, lr_base: float, eta_kl_base: float
) -> Tuple[float, float]:
    """(learning rate, KL weight) in force at diffusion step t."""
    if not 1 <= t <= params.T:
        raise ValueError(f"Step t={t} outside [1, {params.T}].")
    return (
        lr_base * schedule_weight(t, params.T, params.lambda_lr),
        eta_kl_base * schedule_weight(t, params.T, params.lambda_kl),
    )
