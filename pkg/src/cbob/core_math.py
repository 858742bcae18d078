"""Matérn 5/2 kernel, constant mean and standard-normal primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

SQRT5 = math.sqrt(5.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
JITTER = 1e-9


class DimensionError(ValueError):
    """Raised when point dimensions disagree with the kernel lengthscales."""


@dataclass(frozen=True)
class KernelParams:
    """Matérn 5/2 hyperparameters with one lengthscale per input dimension."""

    signal_variance: float
    lengthscales: np.ndarray = field(repr=True)

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if ls.ndim != 1 or ls.size == 0 or np.any(~(ls > 0)):
            raise ValueError(f"lengthscales must be a nonempty vector of positive reals, got {ls}")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    @classmethod
    def isotropic(cls, dim: int, lengthscale: float = 1.0, signal_variance: float = 1.0):
        return cls(signal_variance, np.full(dim, float(lengthscale)))

    def to_log_vector(self) -> np.ndarray:
        return np.concatenate([np.log(self.lengthscales), [math.log(self.signal_variance)]])

    @classmethod
    def from_log_vector(cls, theta) -> KernelParams:
        theta = np.asarray(theta, dtype=float)
        return cls(math.exp(theta[-1]), np.exp(theta[:-1]))

    def scaled(self, factor: float) -> KernelParams:
        """Same lengthscales, signal variance multiplied by ``factor``."""
        return KernelParams(self.signal_variance * factor, self.lengthscales)


@dataclass(frozen=True)
class MeanParams:
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "constant", float(self.constant))
        if not math.isfinite(self.constant):
            raise ValueError("mean constant must be finite")


def _as_points(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1) if dim != 1 or X.size == 1 else X.reshape(-1, 1)
    if X.shape[1] != dim:
        raise DimensionError(f"points have dimension {X.shape[1]}, kernel expects {dim}")
    return X


def _matern_from_r(r: np.ndarray, signal_variance: float) -> np.ndarray:
    sr = SQRT5 * r
    return signal_variance * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


def scaled_distance(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Pairwise ARD distance between rows of ``A`` and ``B``."""
    As = A / lengthscales
    Bs = B / lengthscales
    sq = (As * As).sum(1)[:, None] + (Bs * Bs).sum(1)[None, :] - 2.0 * As @ Bs.T
    return np.sqrt(np.maximum(sq, 0.0))


def matern52(a, b, params: KernelParams) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.size != params.dim:
        raise DimensionError(
            f"point dimensions {a.size} and {b.size} must both equal {params.dim}"
        )
    r = math.sqrt(float(np.sum(((a - b) / params.lengthscales) ** 2)))
    return float(_matern_from_r(np.asarray(r), params.signal_variance))


def matern52_grad(a, b, params: KernelParams) -> tuple[np.ndarray, float]:
    """Partial derivatives of ``matern52(a, b)``.

    Returns ``(d/d lengthscale_j for every j, d/d signal_variance)``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.size != params.dim or b.size != params.dim:
        raise DimensionError("point dimension does not match lengthscales")
    ls = params.lengthscales
    d2 = (a - b) ** 2
    r = math.sqrt(float(np.sum(d2 / ls**2)))
    sr = SQRT5 * r
    common = (5.0 / 3.0) * params.signal_variance * (1.0 + sr) * math.exp(-sr)
    d_ls = common * d2 / ls**3
    d_sv = (1.0 + sr + sr * sr / 3.0) * math.exp(-sr)
    return d_ls, d_sv


def cross_kernel(A, B, params: KernelParams) -> np.ndarray:
    A = _as_points(A, params.dim)
    B = _as_points(B, params.dim)
    return _matern_from_r(scaled_distance(A, B, params.lengthscales), params.signal_variance)


def kernel_matrix(X, params: KernelParams) -> np.ndarray:
    X = _as_points(X, params.dim)
    if X.shape[0] == 0:
        raise ValueError("kernel_matrix needs at least one point")
    # per-dimension differences keep the diagonal exact and the matrix symmetric
    diff = (X[:, None, :] - X[None, :, :]) / params.lengthscales
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    K = _matern_from_r(r, params.signal_variance)
    return 0.5 * (K + K.T)


def kernel_matrix_log_grads(X, params: KernelParams) -> tuple[np.ndarray, list[np.ndarray]]:
    """Kernel matrix and its derivatives w.r.t. log-lengthscales and log-signal-variance."""
    X = _as_points(X, params.dim)
    ls = params.lengthscales
    diff2 = ((X[:, None, :] - X[None, :, :]) / ls) ** 2
    r = np.sqrt(diff2.sum(-1))
    sr = SQRT5 * r
    e = np.exp(-sr)
    K = params.signal_variance * (1.0 + sr + sr * sr / 3.0) * e
    common = (5.0 / 3.0) * params.signal_variance * (1.0 + sr) * e
    grads = [common * diff2[:, :, j] for j in range(ls.size)]
    grads.append(K)
    return K, grads


def std_normal(z: float) -> tuple[float, float]:
    """Standard normal ``(pdf, cdf)`` at ``z``; the cdf uses erfc so both tails stay accurate."""
    z = float(z)
    return INV_SQRT_2PI * math.exp(-0.5 * z * z), 0.5 * math.erfc(-z / math.sqrt(2.0))


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return INV_SQRT_2PI * np.exp(-0.5 * z * z)


def norm_cdf(z):
    return special.ndtr(z)


def norm_logcdf(z):
    return special.log_ndtr(z)


def inv_mills(z):
    """phi(z) / Phi(z), finite for every real z (scaled erfc, no underflow)."""
    z = np.asarray(z, dtype=float)
    return math.sqrt(2.0 / math.pi) / special.erfcx(-z / math.sqrt(2.0))
