"""Codebook lookup and decoding of token fields (hard) or Gumbel-Softmax samples (soft)."""
from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import softmax

from g2d2.core.types import TokenField
from g2d2.utils.numerics import LOG_FLOOR

# Uniforms are kept this far from {0, 1} before the double log.
GUMBEL_EPS = 1e-20


@dataclass(frozen=True)
class Codebook:
    """K embedding vectors b_k of dimension d_b, stored as a K x d_b array."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError(f"Codebook needs a K x d_b array, got shape {vectors.shape}.")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("Codebook entries must be finite.")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def K(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def d_b(self) -> int:
        return int(self.vectors.shape[1])

    def lookup(self, tokens: np.ndarray) -> np.ndarray:
        return self.vectors[np.asarray(tokens, dtype=int)]


class Decoder(abc.ABC):
    """Map from stacked embeddings Z (d_z x d_b) to a signal x_0 of length d_x0."""

    d_z: int
    d_b: int
    d_x0: int

    @abc.abstractmethod
    def forward(self, Z: np.ndarray) -> np.ndarray:
        """Decode one embedding stack."""

    @abc.abstractmethod
    def vjp(self, Z: np.ndarray, grad_x: np.ndarray) -> np.ndarray:
        """Pull a signal-space cotangent back to a d_z x d_b cotangent on Z."""

    def _check(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.shape != (self.d_z, self.d_b):
            raise ValueError(f"Decoder expects Z of shape {(self.d_z, self.d_b)}, got {Z.shape}.")
        return Z


class LinearDecoder(Decoder):
    """Affine decoder x_0 = W vec(Z) + bias."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, d_z: int, d_b: int):
        weight = np.asarray(weight, dtype=float)
        bias = np.asarray(bias, dtype=float)
        if weight.ndim != 2 or weight.shape[1] != d_z * d_b:
            raise ValueError(f"weight must have shape (d_x0, {d_z * d_b}), got {weight.shape}.")
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias must have shape ({weight.shape[0]},), got {bias.shape}.")
        self.weight = weight
        self.bias = bias
        self.d_z = d_z
        self.d_b = d_b
        self.d_x0 = int(weight.shape[0])

    @classmethod
    def identity(cls, d_z: int, d_b: int) -> "LinearDecoder":
        """x_0 = vec(Z); each dimension's embedding lands in its own block."""
        return cls(np.eye(d_z * d_b), np.zeros(d_z * d_b), d_z, d_b)

    def forward(self, Z: np.ndarray) -> np.ndarray:
        return self.weight @ self._check(Z).ravel() + self.bias

    def vjp(self, Z: np.ndarray, grad_x: np.ndarray) -> np.ndarray:
        return (self.weight.T @ np.asarray(grad_x, dtype=float)).reshape(self.d_z, self.d_b)


class MLPDecoder(Decoder):
    """One tanh hidden layer: x_0 = W2 tanh(W1 vec(Z) + b1) + b2."""

    def __init__(
        self,
        w1: np.ndarray,
        b1: np.ndarray,
        w2: np.ndarray,
        b2: np.ndarray,
        d_z: int,
        d_b: int,
    ):
        self.w1 = np.asarray(w1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.b2 = np.asarray(b2, dtype=float)
        hidden = self.w1.shape[0]
        if self.w1.shape != (hidden, d_z * d_b) or self.b1.shape != (hidden,):
            raise ValueError("w1/b1 shapes do not match d_z * d_b inputs.")
        if self.w2.ndim != 2 or self.w2.shape[1] != hidden or self.b2.shape != (self.w2.shape[0],):
            raise ValueError("w2/b2 shapes do not match the hidden layer.")
        self.d_z = d_z
        self.d_b = d_b
        self.d_x0 = int(self.w2.shape[0])

    def _hidden(self, Z: np.ndarray) -> np.ndarray:
        return np.tanh(self.w1 @ self._check(Z).ravel() + self.b1)

    def forward(self, Z: np.ndarray) -> np.ndarray:
        return self.w2 @ self._hidden(Z) + self.b2

    def vjp(self, Z: np.ndarray, grad_x: np.ndarray) -> np.ndarray:
        h = self._hidden(Z)
        grad_pre = (self.w2.T @ np.asarray(grad_x, dtype=float)) * (1.0 - h**2)
        return (self.w1.T @ grad_pre).reshape(self.d_z, self.d_b)


def random_codebook(rng: np.random.Generator, K: int, d_b: int, scale: float = 1.0) -> Codebook:
    return Codebook(scale * rng.standard_normal((K, d_b)))


def random_linear_decoder(
    rng: np.random.Generator, d_z: int, d_b: int, d_x0: int, scale: float = 1.0
) -> LinearDecoder:
    weight = scale * rng.standard_normal((d_x0, d_z * d_b)) / np.sqrt(d_z * d_b)
    bias = 0.1 * scale * rng.standard_normal(d_x0)
    return LinearDecoder(weight, bias, d_z, d_b)


def random_mlp_decoder(
    rng: np.random.Generator, d_z: int, d_b: int, d_x0: int, hidden: int = 8, scale: float = 1.0
) -> MLPDecoder:
    fan_in = d_z * d_b
    return MLPDecoder(
        scale * rng.standard_normal((hidden, fan_in)) / np.sqrt(fan_in),
        0.1 * rng.standard_normal(hidden),
        scale * rng.standard_normal((d_x0, hidden)) / np.sqrt(hidden),
        0.1 * rng.standard_normal(d_x0),
        d_z,
        d_b,
    )


def _check_pair(cb: Codebook, dec: Decoder) -> None:
    if cb.d_b != dec.d_b:
        raise ValueError(f"Codebook d_b={cb.d_b} does not match decoder d_b={dec.d_b}.")


def hard_decode(cb: Codebook, dec: Decoder, z0: TokenField) -> np.ndarray:
    _check_pair(cb, dec)
    if not z0.is_clean:
        raise ValueError("hard_decode needs a fully unmasked token field.")
    if z0.K != cb.K:
        raise ValueError(f"Token field has K={z0.K}, codebook has K={cb.K}.")
    return dec.forward(cb.lookup(z0.tokens))


def sample_gumbel(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """Standard Gumbel noise -log(-log(u)) with u clamped inside (0, 1)."""
    u = np.clip(rng.random(shape), GUMBEL_EPS, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def gumbel_softmax(log_alpha: np.ndarray, g: np.ndarray, tau: float) -> np.ndarray:
    """Soft one-hot samples softmax((log alpha + g) / tau), one simplex row per dimension."""
    if not tau > 0:
        raise ValueError(f"Gumbel-Softmax temperature must be positive, got {tau}.")
    log_alpha = np.maximum(np.asarray(log_alpha, dtype=float), LOG_FLOOR)
    return softmax((log_alpha + g) / tau, axis=-1)


def soft_decode(
    cb: Codebook, dec: Decoder, log_alpha: np.ndarray, g: np.ndarray, tau: float
) -> np.ndarray:
    _check_pair(cb, dec)
    z_soft = gumbel_softmax(log_alpha, g, tau)
    if z_soft.shape != (dec.d_z, cb.K):
        raise ValueError(f"log_alpha must have shape {(dec.d_z, cb.K)}, got {z_soft.shape}.")
    return dec.forward(z_soft @ cb.vectors)
