"""Linear forward operators A and the Gaussian measurement model y = A x_0 + eta."""
from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class LinearOperator(abc.ABC):
    """A named linear map from R^{d_x0} to R^{d_y} with an explicit adjoint."""

    name: str = "linear"

    def __init__(self, d_x0: int):
        if d_x0 < 1:
            raise ValueError(f"Operator input dimension must be positive, got {d_x0}.")
        self.d_x0 = d_x0

    @property
    @abc.abstractmethod
    def d_y(self) -> int:
        """Measurement dimension."""

    @abc.abstractmethod
    def _apply(self, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def _adjoint(self, r: np.ndarray) -> np.ndarray:
        ...

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d_x0,):
            raise ValueError(f"{self.name} expects a signal of length {self.d_x0}, got shape {x.shape}.")
        return self._apply(x)

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.d_y,):
            raise ValueError(f"{self.name} adjoint expects length {self.d_y}, got shape {r.shape}.")
        return self._adjoint(r)

    def matrix(self) -> np.ndarray:
        """Dense d_y x d_x0 matrix, built column by column from ``apply``."""
        return np.stack([self._apply(e) for e in np.eye(self.d_x0)], axis=1)


class IdentityOperator(LinearOperator):
    name = "identity"

    @property
    def d_y(self) -> int:
        return self.d_x0

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return x.copy()

    def _adjoint(self, r: np.ndarray) -> np.ndarray:
        return r.copy()


class MaskingOperator(LinearOperator):
    """Inpainting: keep the listed coordinates, drop the rest."""

    name = "inpainting"

    def __init__(self, d_x0: int, kept: Sequence[int]):
        super().__init__(d_x0)
        kept_idx = np.unique(np.asarray(list(kept), dtype=int))
        if kept_idx.size == 0:
            raise ValueError("Masking operator needs at least one kept coordinate.")
        if kept_idx.min() < 0 or kept_idx.max() >= d_x0:
            raise ValueError(f"Kept coordinates must lie in [0, {d_x0 - 1}].")
        self.kept = kept_idx

    @property
    def d_y(self) -> int:
        return int(self.kept.size)

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return x[self.kept]

    def _adjoint(self, r: np.ndarray) -> np.ndarray:
        out = np.zeros(self.d_x0)
        out[self.kept] = r
        return out


class DownsampleOperator(LinearOperator):
    """Super-resolution analog: average non-overlapping blocks of ``factor`` samples."""

    name = "downsample"

    def __init__(self, d_x0: int, factor: int):
        super().__init__(d_x0)
        if factor < 1 or d_x0 % factor != 0:
            raise ValueError(f"Downsampling factor {factor} must divide the signal length {d_x0}.")
        self.factor = factor

    @property
    def d_y(self) -> int:
        return self.d_x0 // self.factor

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(-1, self.factor).mean(axis=1)

    def _adjoint(self, r: np.ndarray) -> np.ndarray:
        return np.repeat(r / self.factor, self.factor)


def gaussian_kernel(length: int, std: float) -> np.ndarray:
    """Normalized discrete Gaussian of odd ``length`` centred on the middle tap."""
    if length < 1 or length % 2 == 0:
        raise ValueError(f"Blur kernel length must be a positive odd integer, got {length}.")
    if not std > 0:
        raise ValueError(f"Blur kernel standard deviation must be positive, got {std}.")
    offsets = np.arange(length) - (length - 1) / 2
    kernel = np.exp(-0.5 * (offsets / std) ** 2)
    return kernel / kernel.sum()


class BlurOperator(LinearOperator):
    """Deblurring analog: zero-padded 'same' convolution with a Gaussian kernel."""

    name = "blur"

    def __init__(self, d_x0: int, length: int, std: float):
        super().__init__(d_x0)
        if length > d_x0:
            raise ValueError(f"Blur kernel of length {length} is too long for a signal of length {d_x0}.")
        self.kernel = gaussian_kernel(length, std)

    @property
    def d_y(self) -> int:
        return self.d_x0

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return np.convolve(x, self.kernel, mode="same")

    def _adjoint(self, r: np.ndarray) -> np.ndarray:
        return np.convolve(r, self.kernel[::-1], mode="same")


class MatrixOperator(LinearOperator):
    """Explicit dense operator; the zero matrix gives an uninformative measurement."""

    name = "matrix"

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise ValueError(f"Operator matrix must be 2-D and non-empty, got shape {matrix.shape}.")
        super().__init__(int(matrix.shape[1]))
        self._matrix = matrix

    @property
    def d_y(self) -> int:
        return int(self._matrix.shape[0])

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return self._matrix @ x

    def _adjoint(self, r: np.ndarray) -> np.ndarray:
        return self._matrix.T @ r

    def matrix(self) -> np.ndarray:
        return self._matrix.copy()


def apply_operator(op: LinearOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


@dataclass(frozen=True)
class MeasurementModel:
    """Operator plus noise level: the template a measurement is simulated from."""

    op: LinearOperator
    sigma_eta: float

    def __post_init__(self) -> None:
        if self.sigma_eta < 0:
            raise ValueError(f"sigma_eta must be non-negative, got {self.sigma_eta}.")


@dataclass(frozen=True)
class LinearProblem:
    op: LinearOperator
    y: np.ndarray
    sigma_eta: float

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float)
        if y.shape != (self.op.d_y,):
            raise ValueError(f"Measurement must have length {self.op.d_y}, got shape {y.shape}.")
        if self.sigma_eta < 0:
            raise ValueError(f"sigma_eta must be non-negative, got {self.sigma_eta}.")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    def residual(self, x0: np.ndarray) -> np.ndarray:
        return self.y - self.op.apply(x0)

    def residual_norm(self, x0: np.ndarray) -> float:
        return float(np.linalg.norm(self.residual(x0)))


def simulate_measurement(
    template: MeasurementModel, x0_true: np.ndarray, rng: np.random.Generator
) -> LinearProblem:
    clean = template.op.apply(x0_true)
    noise = rng.standard_normal(clean.shape)
    return LinearProblem(template.op, clean + template.sigma_eta * noise, template.sigma_eta)


def log_likelihood(prob: LinearProblem, x0: np.ndarray) -> float:
    """-||y - A x0||^2 / (2 sigma^2), Gaussian constant dropped."""
    if prob.sigma_eta <= 0:
        raise ValueError("The normalized log-likelihood needs sigma_eta > 0.")
    return -prob.residual_norm(x0) ** 2 / (2.0 * prob.sigma_eta**2)


def gaussian_log_normalizer(prob: LinearProblem) -> float:
    """The dropped constant -(d_y / 2) log(2 pi sigma^2)."""
    if prob.sigma_eta <= 0:
        raise ValueError("The Gaussian normalizer needs sigma_eta > 0.")
    return -0.5 * prob.op.d_y * np.log(2.0 * np.pi * prob.sigma_eta**2)
