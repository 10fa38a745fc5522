"""Value types shared across the core: token fields and per-dimension categoricals.

Tokens are zero-based: unmasked tokens are ``0..K-1`` and the MASK symbol is ``K``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

ArrayLike = Union[np.ndarray, Sequence[int], Sequence[float]]

# Tolerance for a categorical row to count as normalized.
ROW_SUM_TOL = 1e-8


@dataclass(frozen=True)
class TokenField:
    """A discrete state z_t: ``d_z`` token indices over K tokens plus MASK."""

    tokens: np.ndarray
    K: int

    def __post_init__(self) -> None:
        tokens = np.asarray(self.tokens)
        if tokens.ndim != 1 or tokens.size == 0:
            raise ValueError(f"TokenField needs a non-empty 1-D token vector, got shape {tokens.shape}.")
        if not np.issubdtype(tokens.dtype, np.integer):
            if not np.all(np.equal(np.mod(tokens, 1), 0)):
                raise ValueError("TokenField entries must be integers.")
        tokens = tokens.astype(np.int64)
        if self.K < 1:
            raise ValueError(f"Codebook size K must be at least 1, got {self.K}.")
        if tokens.min() < 0 or tokens.max() > self.K:
            raise ValueError(f"Token indices must lie in [0, {self.K}] (MASK = {self.K}).")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    @classmethod
    def all_masked(cls, d_z: int, K: int) -> "TokenField":
        return cls(np.full(d_z, K, dtype=np.int64), K)

    @property
    def d_z(self) -> int:
        return int(self.tokens.size)

    @property
    def mask_token(self) -> int:
        return self.K

    @property
    def masked(self) -> np.ndarray:
        return self.tokens == self.K

    @property
    def is_clean(self) -> bool:
        return not bool(self.masked.any())

    def with_tokens(self, tokens: ArrayLike) -> "TokenField":
        return TokenField(np.asarray(tokens), self.K)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenField):
            return NotImplemented
        return self.K == other.K and np.array_equal(self.tokens, other.tokens)

    def __hash__(self) -> int:
        return hash((self.K, self.tokens.tobytes()))

    def __repr__(self) -> str:
        shown = ["M" if v == self.K else str(int(v)) for v in self.tokens]
        return f"TokenField([{' '.join(shown)}], K={self.K})"


@dataclass(frozen=True)
class CategoricalField:
    """``d_z`` independent categoricals over the K unmasked tokens (rows on the simplex)."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] == 0 or probs.shape[1] == 0:
            raise ValueError(f"CategoricalField needs a d_z x K array, got shape {probs.shape}.")
        if not np.all(np.isfinite(probs)):
            raise ValueError("CategoricalField entries must be finite.")
        if probs.min() < 0.0:
            raise ValueError("CategoricalField entries must be non-negative.")
        row_sums = probs.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError(
                f"CategoricalField rows must sum to 1 (max deviation {np.max(np.abs(row_sums - 1.0)):.3g})."
            )
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, d_z: int, K: int) -> "CategoricalField":
        return cls(np.full((d_z, K), 1.0 / K))

    @classmethod
    def from_unnormalized(cls, weights: np.ndarray) -> "CategoricalField":
        weights = np.asarray(weights, dtype=float)
        return cls(weights / weights.sum(axis=1, keepdims=True))

    @property
    def d_z(self) -> int:
        return int(self.probs.shape[0])

    @property
    def K(self) -> int:
        return int(self.probs.shape[1])

    def padded(self) -> np.ndarray:
        """Rows over K+1 states with a zero MASK column."""
        return np.hstack([self.probs, np.zeros((self.d_z, 1))])

    def argmax(self) -> TokenField:
        return TokenField(np.argmax(self.probs, axis=1), self.K)

    def joint(self, fields: np.ndarray) -> np.ndarray:
        """Product-form probability of each row of an enumerated ``(N, d_z)`` field array."""
        fields = np.asarray(fields, dtype=int)
        return np.prod(self.probs[np.arange(self.d_z)[None, :], fields], axis=1)
