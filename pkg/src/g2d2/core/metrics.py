"""Reconstruction and distribution metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

import numpy as np

from g2d2.core.types import TokenField

_TV_NORMALIZATION_TOL = 1e-6


def _pair(x: np.ndarray, x_ref: np.ndarray) -> tuple:
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    if x.shape != x_ref.shape:
        raise ValueError(f"Signals differ in shape: {x.shape} vs {x_ref.shape}.")
    return x, x_ref


def mse(x: np.ndarray, x_ref: np.ndarray) -> float:
    x, x_ref = _pair(x, x_ref)
    return float(np.mean((x - x_ref) ** 2))


def default_peak(x_ref: np.ndarray) -> float:
    """Dynamic range of the reference signal; 1.0 for a constant one."""
    x_ref = np.asarray(x_ref, dtype=float)
    span = float(x_ref.max() - x_ref.min())
    return span if span > 0 else 1.0


def psnr(x: np.ndarray, x_ref: np.ndarray, peak: Optional[float] = None) -> float:
    """10 log10(peak^2 / MSE) in dB; an exact match returns ``inf``."""
    x, x_ref = _pair(x, x_ref)
    if peak is None:
        peak = default_peak(x_ref)
    if not peak > 0:
        raise ValueError(f"PSNR peak must be positive, got {peak}.")
    err = mse(x, x_ref)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / err))


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError(f"Distributions differ in size: {p.size} vs {q.size}.")
    for name, dist in (("p", p), ("q", q)):
        if dist.min() < 0 or abs(dist.sum() - 1.0) > _TV_NORMALIZATION_TOL:
            raise ValueError(f"{name} is not a normalized distribution (sum {dist.sum():.9g}).")
    return float(0.5 * np.abs(p - q).sum())


def token_accuracy(z: TokenField, z_ref: TokenField) -> float:
    if z.K != z_ref.K or z.d_z != z_ref.d_z:
        raise ValueError("Token fields differ in K or d_z.")
    return float(np.mean(z.tokens == z_ref.tokens))


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    mse: float
    token_accuracy: float
    tv_distance: Optional[float] = None

    @property
    def psnr_is_infinite(self) -> bool:
        return bool(np.isinf(self.psnr))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def evaluate(
    x0: np.ndarray,
    x0_ref: np.ndarray,
    z0: TokenField,
    z0_ref: TokenField,
    peak: Optional[float] = None,
    p: Optional[np.ndarray] = None,
    q: Optional[np.ndarray] = None,
) -> MetricReport:
    """Signal and token metrics; the TV entry is filled when both distributions are given."""
    tv = tv_distance(p, q) if p is not None and q is not None else None
    return MetricReport(
        psnr=psnr(x0, x0_ref, peak),
        mse=mse(x0, x0_ref),
        token_accuracy=token_accuracy(z0, z0_ref),
        tv_distance=tv,
    )
