"""Gaussian-process regression with per-observation noise.

The model keeps a Cholesky factor of ``K + diag(noise) + jitter`` and the
solved weight vector, so prediction is two triangular solves.  ``gp_fit``
standardizes targets, maximizes the log marginal likelihood over
log-hyperparameters with analytic gradients and returns the model expressed
in the caller's original target units.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .core_math import (
    JITTER,
    KernelParams,
    MeanParams,
    cross_kernel,
    kernel_matrix,
    kernel_matrix_log_grads,
)

LOG_2PI = math.log(2.0 * math.pi)
MAX_JITTER = 1e-3
LENGTHSCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_VARIANCE_BOUNDS = (1e-4, 1e3)


class GpModelError(RuntimeError):
    """The training covariance could not be factorized even with maximal jitter."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


@dataclass(frozen=True)
class GpTrainingSet:
    X: np.ndarray
    y: np.ndarray
    noise_variances: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        noise = np.broadcast_to(np.asarray(self.noise_variances, dtype=float), y.shape).copy()
        if not (X.shape[0] == y.size == noise.size) or y.size < 1:
            raise ValueError(
                f"training set needs matching nonempty X/y/noise, got {X.shape[0]}/{y.size}/{noise.size}"
            )
        if np.any(noise < 0) or np.any(~np.isfinite(noise)):
            raise ValueError("noise variances must be finite and nonnegative")
        if np.any(~np.isfinite(y)) or np.any(~np.isfinite(X)):
            raise ValueError("training inputs and targets must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "noise_variances", noise)

    @classmethod
    def noise_free(cls, X, y, noise: float = 0.0) -> GpTrainingSet:
        y = np.asarray(y, dtype=float).reshape(-1)
        return cls(X, y, np.full(y.size, noise))

    def __len__(self):
        return self.y.size


@dataclass(frozen=True)
class GpModel:
    kernel: KernelParams
    mean: MeanParams
    train: GpTrainingSet
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def dim(self) -> int:
        return self.kernel.dim

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized posterior mean and variance at the rows of ``X``."""
        Ks = cross_kernel(X, self.train.X, self.kernel)
        mean = self.mean.constant + Ks @ self.alpha
        v = linalg.solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
        var = self.kernel.signal_variance - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)


def _closest_pair(K: np.ndarray) -> tuple[int, int] | None:
    n = K.shape[0]
    if n < 2:
        return None
    d = np.sqrt(np.outer(np.diag(K), np.diag(K)))
    C = K / np.where(d > 0, d, 1.0)
    np.fill_diagonal(C, -np.inf)
    i, j = np.unravel_index(np.argmax(C), C.shape)
    return int(min(i, j)), int(max(i, j))


def factorize(A: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Cholesky of ``A + jitter*scale*I`` escalating jitter x10 from 1e-9 up to 1e-3."""
    jitter = JITTER
    eye = np.eye(A.shape[0])
    while jitter <= MAX_JITTER * (1 + 1e-12):
        try:
            L = linalg.cholesky(A + jitter * scale * eye, lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter
        except linalg.LinAlgError:
            pass
        jitter *= 10.0
    pair = _closest_pair(A)
    raise GpModelError(
        f"covariance not positive definite with jitter {MAX_JITTER:g}; "
        f"most correlated training points: {pair}",
        pair,
    )


def build_gp(train: GpTrainingSet, kernel: KernelParams, mean: MeanParams | None = None) -> GpModel:
    """Condition a GP with fixed hyperparameters on ``train``."""
    mean = mean or MeanParams(0.0)
    if train.X.shape[1] != kernel.dim:
        raise ValueError(f"training inputs have dimension {train.X.shape[1]}, kernel {kernel.dim}")
    K = kernel_matrix(train.X, kernel)
    A = K + np.diag(train.noise_variances)
    L, jitter = factorize(A, kernel.signal_variance)
    alpha = linalg.cho_solve((L, True), train.y - mean.constant, check_finite=False)
    return GpModel(kernel, mean, train, L, alpha, jitter)


def gp_predict(model: GpModel, x) -> tuple[float, float]:
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    mean, var = model.predict(x)
    return float(mean[0]), float(var[0])


def log_marginal_likelihood(model: GpModel) -> float:
    r = model.train.y - model.mean.constant
    n = r.size
    return float(
        -0.5 * r @ model.alpha - np.sum(np.log(np.diag(model.chol))) - 0.5 * n * LOG_2PI
    )


def _profiled_nll(theta, X, y, noise, fit_mean: bool, with_grad: bool = True):
    """Negative log marginal likelihood with the constant mean profiled out (GLS)."""
    kernel = KernelParams.from_log_vector(theta)
    K, dK = kernel_matrix_log_grads(X, kernel)
    A = K + np.diag(noise)
    try:
        L, jitter = factorize(A, kernel.signal_variance)
    except GpModelError:
        return (1e25, np.zeros_like(theta)) if with_grad else 1e25
    ones = np.ones_like(y)
    if fit_mean:
        Ainv1 = linalg.cho_solve((L, True), ones, check_finite=False)
        m = float(Ainv1 @ y / (Ainv1 @ ones))
    else:
        m = 0.0
    r = y - m
    alpha = linalg.cho_solve((L, True), r, check_finite=False)
    nll = 0.5 * r @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * y.size * LOG_2PI
    if not with_grad:
        return nll
    Ainv = linalg.cho_solve((L, True), np.eye(y.size), check_finite=False)
    W = np.outer(alpha, alpha) - Ainv
    # jitter scales with the signal variance, so it belongs to that derivative
    dK[-1] = dK[-1] + jitter * kernel.signal_variance * np.eye(y.size)
    grad = np.array([-0.5 * np.sum(W * D) for D in dK])
    return nll, grad


def profiled_mean(train: GpTrainingSet, kernel: KernelParams) -> float:
    K = kernel_matrix(train.X, kernel)
    L, _ = factorize(K + np.diag(train.noise_variances), kernel.signal_variance)
    ones = np.ones(len(train))
    Ainv1 = linalg.cho_solve((L, True), ones, check_finite=False)
    return float(Ainv1 @ train.y / (Ainv1 @ ones))


def gp_fit(
    train: GpTrainingSet,
    restarts: int = 5,
    seed: int = 0,
    *,
    fit_mean: bool = True,
    standardize: bool = True,
    initial: KernelParams | None = None,
    maxiter: int = 200,
) -> GpModel:
    """Fit Matérn 5/2 hyperparameters by multi-start maximization of the marginal likelihood.

    Parameters
    ----------
    train : GpTrainingSet
        Observations; noise variances are fixed, not fitted.
    restarts : int
        Number of L-BFGS-B local searches in log-hyperparameter space.  The
        first starts from ``initial`` (or a data-driven default), the rest
        from seeded uniform draws inside the search box.
    seed : int
        Seed for the start points; identical seeds give identical models.
    fit_mean : bool
        Profile the constant mean by generalized least squares.  When
        False the mean is fixed at zero (classifier latents).
    standardize : bool
        Work on ``(y - mean(y)) / std(y)``; the returned model is mapped
        back to the original units.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    X, y, noise = train.X, train.y, train.noise_variances
    n, dim = X.shape
    if standardize:
        center = float(np.mean(y))
        scale = float(np.std(y))
        if not scale > 1e-12 or n < 2:
            scale = 1.0
    else:
        center, scale = 0.0, 1.0
    ys = (y - center) / scale
    ns = noise / scale**2

    lo = np.concatenate([np.full(dim, math.log(LENGTHSCALE_BOUNDS[0])), [math.log(SIGNAL_VARIANCE_BOUNDS[0])]])
    hi = np.concatenate([np.full(dim, math.log(LENGTHSCALE_BOUNDS[1])), [math.log(SIGNAL_VARIANCE_BOUNDS[1])]])
    rng = np.random.default_rng(seed)
    starts = []
    if initial is not None:
        starts.append(np.clip(initial.scaled(1.0 / scale**2).to_log_vector(), lo, hi))
    else:
        spread = np.ptp(X, axis=0) if n > 1 else np.ones(dim)
        ls0 = np.clip(0.5 * np.where(spread > 0, spread, 1.0), *LENGTHSCALE_BOUNDS)
        starts.append(np.concatenate([np.log(ls0), [0.0]]))
    start_lo = np.concatenate([np.full(dim, math.log(1e-2)), [math.log(1e-1)]])
    start_hi = np.concatenate([np.full(dim, math.log(LENGTHSCALE_BOUNDS[1])), [math.log(1e1)]])
    while len(starts) < restarts:
        starts.append(rng.uniform(start_lo, start_hi))

    best_theta, best_val = None, np.inf
    bounds = list(zip(lo, hi))
    for theta0 in starts[:restarts]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(
                _profiled_nll,
                theta0,
                args=(X, ys, ns, fit_mean),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": maxiter},
            )
        val = float(res.fun)
        if np.isfinite(val) and val < best_val:
            best_val, best_theta = val, np.asarray(res.x, dtype=float)
    if best_theta is None:
        best_theta = starts[0]

    kernel_s = KernelParams.from_log_vector(best_theta)
    std_train = GpTrainingSet(X, ys, ns)
    m_s = profiled_mean(std_train, kernel_s) if fit_mean else 0.0
    kernel = kernel_s.scaled(scale**2)
    mean = MeanParams(center + scale * m_s)
    return build_gp(train, kernel, mean)
