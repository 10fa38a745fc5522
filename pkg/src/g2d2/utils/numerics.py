"""Small numerical helpers shared by the core modules."""
from __future__ import annotations

import numpy as np
from scipy.special import log_softmax, softmax

from g2d2.core.errors import EnumerationLimitError

# Floor applied to log-probabilities before they enter a softmax or a KL term.
LOG_FLOOR = -30.0

# Largest state space any brute-force routine may enumerate.
ENUMERATION_LIMIT = 10**6


def clamped_log(probs: np.ndarray, floor: float = LOG_FLOOR) -> np.ndarray:
    """Elementwise log with zero probabilities mapped to ``floor``."""
    probs = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore"):
        logs = np.log(probs)
    return np.maximum(logs, floor)


def safe_log(probs: np.ndarray) -> np.ndarray:
    """Log that keeps exact values and maps zeros to the smallest usable double."""
    return np.log(np.maximum(np.asarray(probs, dtype=float), 1e-300))


def row_softmax(logits: np.ndarray) -> np.ndarray:
    return softmax(np.asarray(logits, dtype=float), axis=-1)


def row_log_softmax(logits: np.ndarray) -> np.ndarray:
    return log_softmax(np.asarray(logits, dtype=float), axis=-1)


def xlogy_sum(p: np.ndarray, log_q: np.ndarray) -> float:
    """Sum of p * log_q with the 0 * log 0 = 0 convention."""
    p = np.asarray(p, dtype=float)
    mask = p > 0
    return float(np.sum(p[mask] * np.asarray(log_q)[mask]))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) between two flat distributions, exact up to a 1e-300 floor on q."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    return xlogy_sum(p, safe_log(p)) - xlogy_sum(p, safe_log(q))


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row of ``probs`` by inverse CDF.

    Exactly one uniform is consumed per row, whatever the probabilities are.
    Zero-probability entries are never returned.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    cdf = np.cumsum(probs, axis=-1)
    cdf = cdf / cdf[:, -1:]
    u = rng.random(probs.shape[0])
    idx = (u[:, None] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[1] - 1)


def check_enumeration(what: str, size: int, limit: int = ENUMERATION_LIMIT) -> None:
    if size > limit:
        raise EnumerationLimitError(what, size, limit)


def enumerate_fields(n_values: int, d_z: int) -> np.ndarray:
    """All length-``d_z`` index vectors over ``range(n_values)``, lexicographic order.

    Row ``r`` encodes ``r`` in base ``n_values`` with dimension 0 most significant.
    """
    check_enumeration("Field enumeration", n_values**d_z)
    grids = np.indices((n_values,) * d_z).reshape(d_z, -1)
    return grids.T.copy()


def field_index(field: np.ndarray, n_values: int) -> int:
    """Inverse of :func:`enumerate_fields` for a single field."""
    index = 0
    for value in np.asarray(field, dtype=int):
        index = index * n_values + int(value)
    return index
