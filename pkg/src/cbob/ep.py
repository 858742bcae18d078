"""Expectation propagation for heterogeneous-likelihood GPs and the probit GP classifier.

Measured constraint values enter through fixed Gaussian sites.  Violation
flags (and classifier labels) enter through probit sites
``Phi(sign * g / alpha)`` whose Gaussian approximations are refined by
sequential moment matching.  The converged sites act as virtual
observations: an ordinary GP conditioned on (site mean, site variance) pairs
reproduces the EP posterior, and its marginal likelihood drives
hyperparameter fitting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .core_math import KernelParams, MeanParams, inv_mills, kernel_matrix, norm_cdf, norm_logcdf
from .gp import GpModel, GpTrainingSet, build_gp, factorize, gp_fit, gp_predict

logger = logging.getLogger(__name__)

MIN_SITE_VARIANCE = 1e-10
MAX_SITE_VARIANCE = 1e10


@dataclass(frozen=True)
class EpConfig:
    tolerance: float = 1e-6
    max_sweeps: int = 100
    damping: float = 0.8
    sigma: float = 1e-6
    alpha: float = 1e-6
    alternations: int = 3
    restarts: int = 5

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_sweeps < 1 or self.tolerance <= 0:
            raise ValueError("max_sweeps must be >= 1 and tolerance > 0")
        if self.sigma < 0 or self.alpha <= 0:
            raise ValueError("sigma must be >= 0 and alpha > 0")


@dataclass(frozen=True)
class ConstraintObservation:
    """A measured constraint value, or (``value is None``) only the fact that it was violated."""

    x: np.ndarray
    value: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        if self.value is not None:
            object.__setattr__(self, "value", float(self.value))

    @classmethod
    def measured(cls, x, g: float) -> ConstraintObservation:
        return cls(x, g)

    @classmethod
    def violated(cls, x) -> ConstraintObservation:
        return cls(x, None)

    @property
    def is_flag(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class SiteParams:
    site_mean: float
    site_variance: float
    log_normalizer: float


def moment_match_probit(cavity_mean: float, cavity_variance: float, alpha: float, sign: float = 1.0):
    """Moments of ``N(g; cavity) * Phi(sign * g / alpha)``.

    Returns ``(Zhat, mu_hat, var_hat)``: normalizer, mean and variance of
    the tilted distribution.  The inverse Mills ratio is evaluated through
    the scaled complementary error function, so deep negative ``z`` never
    divides by an underflowed cdf.
    """
    if not cavity_variance > 0:
        raise ValueError("cavity variance must be positive")
    denom = math.sqrt(alpha * alpha + cavity_variance)
    z = sign * cavity_mean / denom
    ratio = float(inv_mills(z))
    mu_hat = cavity_mean + sign * cavity_variance * ratio / denom
    shrink = cavity_variance * cavity_variance * ratio * (z + ratio) / (alpha * alpha + cavity_variance)
    var_hat = min(cavity_variance, max(cavity_variance - shrink, MIN_SITE_VARIANCE * 1e-2))
    return float(norm_cdf(z)), mu_hat, var_hat


def _log_moment_normalizer(cavity_mean, cavity_variance, alpha, sign):
    return float(norm_logcdf(sign * cavity_mean / math.sqrt(alpha * alpha + cavity_variance)))


@dataclass
class _Sites:
    """Site natural parameters; ``tau == 0`` marks a site that carries no information yet."""

    tau: np.ndarray
    nu: np.ndarray
    log_z: np.ndarray

    def means(self):
        return np.where(self.tau > 0, self.nu / np.where(self.tau > 0, self.tau, 1.0), 0.0)

    def variances(self):
        return np.where(self.tau > 0, 1.0 / np.where(self.tau > 0, self.tau, 1.0), np.inf)


def _posterior(K: np.ndarray, m: float, sites: _Sites, signal_variance: float):
    """Posterior mean vector and covariance at the training inputs."""
    idx = np.flatnonzero(sites.tau > 0)
    if idx.size == 0:
        return np.full(K.shape[0], m), K.copy()
    A = K[np.ix_(idx, idx)] + np.diag(1.0 / sites.tau[idx])
    L, _ = factorize(A, signal_variance)
    KI = K[:, idx]
    V = linalg.solve_triangular(L, KI.T, lower=True, check_finite=False)
    Sigma = K - V.T @ V
    mu = m + KI @ linalg.cho_solve((L, True), sites.nu[idx] / sites.tau[idx] - m, check_finite=False)
    return mu, Sigma


def _run_ep(X, gauss_values, gauss_noise, probit_sign, probit_alpha, kernel, mean, config, order=None,
            init: _Sites | None = None):
    """Sequential EP.

    ``gauss_values[i]`` is NaN for probit sites.  Returns the converged
    sites, a convergence flag and the number of sweeps performed.
    """
    n = X.shape[0]
    K = kernel_matrix(X, kernel)
    m = mean.constant
    is_gauss = ~np.isnan(gauss_values)
    probit_idx = np.flatnonzero(~is_gauss)
    if order is not None:
        order = [int(i) for i in order if not is_gauss[int(i)]]
    else:
        order = list(probit_idx)

    if init is not None:
        sites = _Sites(init.tau.copy(), init.nu.copy(), init.log_z.copy())
    else:
        sites = _Sites(np.zeros(n), np.zeros(n), np.zeros(n))
    noise = np.maximum(gauss_noise, MIN_SITE_VARIANCE * 1e-2)
    sites.tau[is_gauss] = 1.0 / noise[is_gauss]
    sites.nu[is_gauss] = gauss_values[is_gauss] / noise[is_gauss]
    sites.log_z[is_gauss] = 0.0

    if probit_idx.size == 0:
        return sites, True, 1

    mu, Sigma = _posterior(K, m, sites, kernel.signal_variance)
    converged = False
    sweep = 0
    for sweep in range(1, config.max_sweeps + 1):
        old_mean, old_var = sites.means(), sites.variances()
        for k in order:
            s_kk = Sigma[k, k]
            tau_cav = 1.0 / s_kk - sites.tau[k]
            if not tau_cav > 0:
                continue
            nu_cav = mu[k] / s_kk - sites.nu[k]
            cav_var = 1.0 / tau_cav
            cav_mean = nu_cav * cav_var
            _, mu_hat, var_hat = moment_match_probit(cav_mean, cav_var, probit_alpha[k], probit_sign[k])
            tau_prop = 1.0 / var_hat - tau_cav
            nu_prop = mu_hat / var_hat - nu_cav
            # keep the site variance inside [1e-10, 1e10]
            tau_prop = min(max(tau_prop, 1.0 / MAX_SITE_VARIANCE), 1.0 / MIN_SITE_VARIANCE)
            if not (np.isfinite(tau_prop) and np.isfinite(nu_prop)):
                continue
            d = config.damping
            tau_new = d * tau_prop + (1.0 - d) * sites.tau[k]
            nu_new = d * nu_prop + (1.0 - d) * sites.nu[k]
            d_tau = tau_new - sites.tau[k]
            d_nu = nu_new - sites.nu[k]
            denom = 1.0 + d_tau * s_kk
            if not denom > 0:
                continue
            s = Sigma[:, k].copy()
            mu = mu + s * ((d_nu - d_tau * mu[k]) / denom)
            Sigma = Sigma - np.outer(s, s) * (d_tau / denom)
            sites.tau[k], sites.nu[k] = tau_new, nu_new
            site_var = 1.0 / tau_new
            site_mean = nu_new / tau_new
            sites.log_z[k] = (
                _log_moment_normalizer(cav_mean, cav_var, probit_alpha[k], probit_sign[k])
                + 0.5 * math.log(cav_var + site_var)
                + 0.5 * math.log(2 * math.pi)
                + (cav_mean - site_mean) ** 2 / (2.0 * (cav_var + site_var))
            )
        mu, Sigma = _posterior(K, m, sites, kernel.signal_variance)
        new_mean, new_var = sites.means(), sites.variances()
        change = _site_change(old_mean, old_var, new_mean, new_var, probit_idx)
        if change < config.tolerance:
            converged = True
            break
    return sites, converged, sweep


def _site_change(old_mean, old_var, new_mean, new_var, idx) -> float:
    if idx.size == 0:
        return 0.0
    om, ov, nm, nv = old_mean[idx], old_var[idx], new_mean[idx], new_var[idx]
    if np.any(~np.isfinite(ov)):
        return np.inf
    dm = np.abs(nm - om) / np.maximum(1.0, np.abs(nm))
    # a site pinned at the variance ceiling carries no information; its mean is noise
    ceiling = (ov >= MAX_SITE_VARIANCE * (1 - 1e-9)) & (nv >= MAX_SITE_VARIANCE * (1 - 1e-9))
    dm = np.where(ceiling, 0.0, dm)
    dv = np.abs(nv - ov) / np.maximum(1.0, np.abs(nv))
    return float(max(dm.max(), dv.max()))


@dataclass(frozen=True)
class HlgpModel:
    gp: GpModel
    sites: list[SiteParams]
    config: EpConfig
    is_flag: np.ndarray
    converged: bool = True
    sweeps: int = 0

    @property
    def warning(self) -> bool:
        return not self.converged

    @property
    def kernel(self) -> KernelParams:
        return self.gp.kernel

    @property
    def mean(self) -> MeanParams:
        return self.gp.mean

    def predict(self, X):
        return self.gp.predict(X)


def _observation_arrays(observations):
    if len(observations) == 0:
        raise ValueError("at least one constraint observation is required")
    X = np.vstack([o.x for o in observations])
    values = np.array([np.nan if o.is_flag else o.value for o in observations])
    return X, values


def _to_site_params(sites: _Sites) -> list[SiteParams]:
    means, variances = sites.means(), sites.variances()
    return [SiteParams(float(a), float(b), float(c)) for a, b, c in zip(means, variances, sites.log_z)]


def ep_fit_hlgp(
    observations,
    kernel: KernelParams,
    mean: MeanParams,
    config: EpConfig = EpConfig(),
    order=None,
) -> HlgpModel:
    """EP fit of an HLGP with fixed hyperparameters.

    Values get Gaussian sites with noise ``config.sigma**2``; flags get
    probit sites ``Phi(g / config.alpha)``.
    """
    X, values = _observation_arrays(observations)
    n = values.size
    sites, converged, sweeps = _run_ep(
        X,
        values,
        np.full(n, config.sigma**2),
        np.ones(n),
        np.full(n, config.alpha),
        kernel,
        mean,
        config,
        order=order,
    )
    if not converged:
        logger.warning("EP did not converge within %d sweeps", config.max_sweeps)
    train = GpTrainingSet(X, sites.means(), np.minimum(sites.variances(), MAX_SITE_VARIANCE))
    gp = build_gp(train, kernel, mean)
    return HlgpModel(gp, _to_site_params(sites), config, np.isnan(values), converged, sweeps)


def hlgp_predict(model: HlgpModel, x) -> tuple[float, float]:
    return gp_predict(model.gp, x)


def to_virtual_observations(model) -> GpTrainingSet:
    """Site means/variances as a regression training set."""
    return model.gp.train


def _value_scale(values: np.ndarray) -> float:
    vals = values[~np.isnan(values)]
    if vals.size >= 2 and np.std(vals) > 1e-12:
        return float(np.std(vals))
    if vals.size >= 1 and np.max(np.abs(vals)) > 1e-12:
        return float(np.max(np.abs(vals)))
    return 1.0


def _default_kernel(X: np.ndarray, signal_variance: float) -> KernelParams:
    spread = np.ptp(X, axis=0) if X.shape[0] > 1 else np.ones(X.shape[1])
    ls = np.clip(0.5 * np.where(spread > 0, spread, 1.0), 1e-3, 10.0)
    return KernelParams(signal_variance, ls)


def fit_hlgp(observations, config: EpConfig = EpConfig(), seed: int = 0) -> HlgpModel:
    """HLGP with hyperparameters fitted on virtual observations.

    Alternates EP and marginal-likelihood fitting of a plain GP on the
    resulting (site mean, site variance) pairs ``config.alternations``
    times, then runs a final EP with the last hyperparameters.
    """
    X, values = _observation_arrays(observations)
    scale = _value_scale(values)
    kernel = _default_kernel(X, scale**2)
    mean = MeanParams(0.0)
    for it in range(config.alternations):
        model = ep_fit_hlgp(observations, kernel, mean, config)
        virtual = to_virtual_observations(model)
        scaled = GpTrainingSet(virtual.X, virtual.y / scale, virtual.noise_variances / scale**2)
        fitted = gp_fit(
            scaled,
            restarts=config.restarts,
            seed=seed + 7919 * it,
            standardize=False,
            initial=kernel.scaled(1.0 / scale**2),
        )
        kernel = fitted.kernel.scaled(scale**2)
        mean = MeanParams(fitted.mean.constant * scale)
    return ep_fit_hlgp(observations, kernel, mean, config)


@dataclass(frozen=True)
class GpcModel:
    """Probit GP classifier; ``predict_proba`` is the probability of label +1."""

    gp: GpModel
    sites: list[SiteParams]
    labels: np.ndarray
    converged: bool = True
    sweeps: int = 0
    single_class: bool = False

    @property
    def kernel(self) -> KernelParams:
        return self.gp.kernel

    def predict(self, X):
        """Latent mean and variance."""
        return self.gp.predict(X)

    def predict_proba(self, X) -> np.ndarray:
        mu, var = self.gp.predict(X)
        return norm_cdf(mu / np.sqrt(1.0 + var))


def _label_arrays(labels):
    if len(labels) == 0:
        raise ValueError("at least one label is required")
    X = np.vstack([np.atleast_1d(np.asarray(x, dtype=float)) for x, _ in labels])
    y = np.array([float(lab) for _, lab in labels])
    if np.any(np.abs(y) != 1):
        raise ValueError("labels must be +1 or -1")
    return X, y


def ep_fit_gpc(labels, kernel: KernelParams, config: EpConfig = EpConfig(), order=None) -> GpcModel:
    """EP fit of a zero-mean probit classifier (slope 1) with fixed hyperparameters."""
    X, y = _label_arrays(labels)
    n = y.size
    sites, converged, sweeps = _run_ep(
        X, np.full(n, np.nan), np.zeros(n), y, np.ones(n), kernel, MeanParams(0.0), config, order=order
    )
    train = GpTrainingSet(X, sites.means(), np.minimum(sites.variances(), MAX_SITE_VARIANCE))
    gp = build_gp(train, kernel, MeanParams(0.0))
    single = bool(np.all(y == y[0]))
    return GpcModel(gp, _to_site_params(sites), y, converged, sweeps, single)


def fit_gpc(labels, config: EpConfig = EpConfig(), seed: int = 0) -> GpcModel:
    """Classifier with hyperparameters fitted by the same EP / virtual-observation alternation."""
    X, y = _label_arrays(labels)
    kernel = _default_kernel(X, 1.0)
    for it in range(config.alternations):
        model = ep_fit_gpc(labels, kernel, config)
        fitted = gp_fit(
            to_virtual_observations(model),
            restarts=config.restarts,
            seed=seed + 7919 * it,
            fit_mean=False,
            standardize=False,
            initial=kernel,
        )
        kernel = fitted.kernel
    return ep_fit_gpc(labels, kernel, config)
