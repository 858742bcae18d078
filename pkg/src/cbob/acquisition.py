"""EI, POF, dynamic POF and the EICB acquisition with POB / EMUB exploration."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import special
from scipy.stats import qmc

from .core_math import inv_mills, norm_cdf, norm_logcdf, norm_pdf
from .ep import GpcModel

STD_CUTOFF = 1e-12
DEFAULT_BETA = 1.96


class NoIncumbentError(RuntimeError):
    """EI is undefined: no objective model or no feasible evaluation yet."""


@dataclass(frozen=True)
class Pob:
    beta: float = DEFAULT_BETA


@dataclass(frozen=True)
class Emub:
    beta: float = DEFAULT_BETA
    gamma: Union[float, str] = "adapt"

    def __post_init__(self):
        if isinstance(self.gamma, str):
            if self.gamma.lower() != "adapt":
                raise ValueError(f"gamma must be positive or 'adapt', got {self.gamma!r}")
            object.__setattr__(self, "gamma", "adapt")
        elif not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def adaptive(self) -> bool:
        return self.gamma == "adapt"


Exploration = Union[None, Pob, Emub]


@dataclass(frozen=True)
class AcquisitionSpec:
    family: str = "EICB"
    exploration: Exploration = field(default_factory=Pob)
    lam: float = 0.0

    def __post_init__(self):
        family = self.family.upper()
        object.__setattr__(self, "family", family)
        if family not in ("EIC", "EICB"):
            raise ValueError(f"unknown acquisition family {self.family!r}")
        if (family == "EIC") != (self.exploration is None):
            raise ValueError("EIC takes no exploration function; EICB requires one")
        beta = getattr(self.exploration, "beta", None)
        if beta is not None and not beta > 0:
            raise ValueError("beta must be positive")

    @classmethod
    def eic(cls, lam: float = 0.0) -> AcquisitionSpec:
        return cls("EIC", None, lam)


@dataclass
class SurrogateBundle:
    objective: object | None
    constraints: Sequence[object]
    best_feasible: float | None = None
    gammas: list[float] | None = None

    @property
    def has_incumbent(self) -> bool:
        return self.objective is not None and self.best_feasible is not None


def expected_improvement(mean, std, best):
    mean, std = np.asarray(mean, dtype=float), np.asarray(std, dtype=float)
    safe = np.where(std > STD_CUTOFF, std, 1.0)
    z = (best - mean) / safe
    ei = safe * (z * norm_cdf(z) + norm_pdf(z))
    out = np.where(std > STD_CUTOFF, np.maximum(ei, 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def _log_h(z):
    """log(z*Phi(z) + phi(z)) without underflow for very negative z."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    mid = z > -25.0
    zm = z[mid]
    out[mid] = np.log(np.maximum(zm * norm_cdf(zm) + norm_pdf(zm), 1e-300))
    zt = z[~mid]
    # h = phi(z) * (1 + z / r(z)) with r the inverse Mills ratio
    if zt.size:
        r = inv_mills(zt)
        tail = 1.0 + zt / r
        asym = np.log(np.maximum(tail, 1e-300))
        asym = np.where(tail > 0, asym, -2.0 * np.log(-zt))
        out[~mid] = -0.5 * zt * zt - 0.5 * math.log(2 * math.pi) + asym
    return out


def log_expected_improvement(mean, std, best):
    mean, std = np.asarray(mean, dtype=float), np.asarray(std, dtype=float)
    safe = np.where(std > STD_CUTOFF, std, 1.0)
    z = np.atleast_1d((best - mean) / safe)
    val = np.log(np.atleast_1d(safe)) + _log_h(z)
    val = np.where(np.atleast_1d(std) > STD_CUTOFF, val, -np.inf)
    return val.reshape(np.shape(mean)) if np.ndim(mean) else float(val[0])


def pof(constraint_means, constraint_stds, lam: float = 0.0) -> float:
    mu = np.asarray(constraint_means, dtype=float)
    sd = np.asarray(constraint_stds, dtype=float)
    return float(np.prod(norm_cdf((lam - mu) / sd)))


def exploration_pob(mean, std, beta: float = DEFAULT_BETA):
    mean, std = np.asarray(mean, dtype=float), np.asarray(std, dtype=float)
    ok = std > STD_CUTOFF
    # symmetric in g; |g| keeps both terms in the lower tail
    g = np.abs(mean / np.where(ok, std, 1.0))
    val = special.ndtr(beta - g) - special.ndtr(-beta - g)
    out = np.where(ok, np.maximum(val, 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def emub(mean, std, beta: float = DEFAULT_BETA):
    """Expected most-uncertain-boundary utility ``E[max(beta*std - |g|, 0)]``."""
    mean, std = np.asarray(mean, dtype=float), np.asarray(std, dtype=float)
    ok = std > STD_CUTOFF
    s = np.where(ok, std, 1.0)
    gbar = mean / s
    gp, gm = beta - gbar, -beta - gbar
    eps = beta * s
    val = (
        eps * (norm_cdf(gp) - norm_cdf(gm))
        - s * (2.0 * norm_pdf(-gbar) - norm_pdf(gp) - norm_pdf(gm))
        + mean * (2.0 * norm_cdf(-gbar) - norm_cdf(gp) - norm_cdf(gm))
    )
    out = np.where(ok, np.maximum(val, 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def exploration_emub(mean, std, beta: float = DEFAULT_BETA, gamma: float = 1.0):
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return emub(mean, std, beta) / gamma


def constraint_moments(surrogate, X) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian (mean, std) of each constraint's latent used for POF and exploration.

    Classifiers report label +1 for violation, so their predictive
    probability of feasibility is ``Phi(-mu / sqrt(1 + var))``.
    """
    mu, var = surrogate.predict(X)
    if isinstance(surrogate, GpcModel):
        return mu, np.sqrt(1.0 + var)
    return mu, np.sqrt(var)


def sobol_probes(box, count: int, seed: int) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    sampler = qmc.Sobol(d=box.shape[0], scramble=True, seed=seed)
    with warnings.catch_warnings():
        # counts need not be powers of two
        warnings.simplefilter("ignore", UserWarning)
        u = sampler.random(count)
    return qmc.scale(u, box[:, 0], box[:, 1])


def adapt_gamma(surrogate, beta: float, box, probe_count: int = 2048, seed: int = 0, lam: float = 0.0) -> float:
    """Scale for EMUB: the largest ``EMUB * Phi((lam - mu)/sd)`` over seeded Sobol probes."""
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    P = sobol_probes(box, probe_count, seed)
    mu, sd = constraint_moments(surrogate, P)
    vals = emub(mu, sd, beta) * norm_cdf((lam - mu) / np.where(sd > 0, sd, 1.0))
    return max(float(np.max(vals)), 1e-12)


def resolve_gammas(bundle: SurrogateBundle, spec: AcquisitionSpec, box, probe_count: int = 2048, seed: int = 0):
    """Fill ``bundle.gammas`` when ``spec`` uses adaptive EMUB scaling."""
    ex = spec.exploration
    if isinstance(ex, Emub) and ex.adaptive:
        bundle.gammas = [
            adapt_gamma(c, ex.beta, box, probe_count, seed + i, spec.lam) for i, c in enumerate(bundle.constraints)
        ]
    return bundle


def _exploration(spec: AcquisitionSpec, bundle: SurrogateBundle, i: int, mu, sd):
    ex = spec.exploration
    if ex is None:
        return np.zeros_like(mu)
    if isinstance(ex, Pob):
        return exploration_pob(mu, sd, ex.beta)
    if ex.adaptive:
        if bundle.gammas is None:
            raise ValueError("adaptive EMUB needs resolve_gammas() before evaluation")
        gamma = bundle.gammas[i]
    else:
        gamma = ex.gamma
    return exploration_emub(mu, sd, ex.beta, gamma)


def dpof_factors(bundle: SurrogateBundle, spec: AcquisitionSpec, X) -> tuple[np.ndarray, np.ndarray]:
    """Per-constraint ``(log DPOF factor, log POF factor)``, shape (m, len(X))."""
    X = np.atleast_2d(X)
    logd, logp = [], []
    for i, c in enumerate(bundle.constraints):
        mu, sd = constraint_moments(c, X)
        ok = sd > 0
        z = np.where(ok, (spec.lam - mu) / np.where(ok, sd, 1.0), np.where(mu <= spec.lam, np.inf, -np.inf))
        lp = norm_logcdf(z)
        rho = _exploration(spec, bundle, i, mu, sd)
        logd.append(np.minimum(0.0, np.log1p(rho) + lp))
        logp.append(lp)
    if not logd:
        zeros = np.zeros((0, X.shape[0]))
        return zeros, zeros
    return np.array(logd), np.array(logp)


def dpof(bundle: SurrogateBundle, spec: AcquisitionSpec, X):
    X = np.atleast_2d(X)
    if spec.exploration is None:
        out = np.ones(X.shape[0])
        for c in bundle.constraints:
            mu, sd = constraint_moments(c, X)
            out = out * norm_cdf((spec.lam - mu) / sd)
        return out
    logd, _ = dpof_factors(bundle, spec, X)
    return np.exp(logd.sum(0))


def log_dpof(bundle: SurrogateBundle, spec: AcquisitionSpec, X):
    logd, _ = dpof_factors(bundle, spec, X)
    return logd.sum(0) if logd.size else np.zeros(np.atleast_2d(X).shape[0])


def dynamic_threshold(bundle: SurrogateBundle, spec: AcquisitionSpec, X) -> np.ndarray:
    """Diagnostic: the constraint level each DPOF factor corresponds to, ``mu + sd * Phi^-1(factor)``."""
    X = np.atleast_2d(X)
    logd, _ = dpof_factors(bundle, spec, X)
    out = []
    for i, c in enumerate(bundle.constraints):
        mu, sd = constraint_moments(c, X)
        out.append(mu + sd * special.ndtri(np.exp(logd[i])))
    return np.array(out)


def _objective_moments(bundle: SurrogateBundle, X):
    if not bundle.has_incumbent:
        raise NoIncumbentError("no feasible incumbent; use the DPOF-only fallback")
    mu, var = bundle.objective.predict(np.atleast_2d(X))
    return mu, np.sqrt(var)


def eicb(bundle: SurrogateBundle, spec: AcquisitionSpec, X):
    """EI times DPOF; with ``spec.family == 'EIC'`` this is EI times POF."""
    mu, sd = _objective_moments(bundle, X)
    return expected_improvement(mu, sd, bundle.best_feasible) * dpof(bundle, spec, X)


def eic(bundle: SurrogateBundle, X, lam: float = 0.0):
    return eicb(bundle, AcquisitionSpec.eic(lam), X)


def log_acquisition(bundle: SurrogateBundle, spec: AcquisitionSpec, X):
    """log EICB, or log DPOF alone when there is no feasible incumbent."""
    X = np.atleast_2d(X)
    if not bundle.has_incumbent:
        return log_dpof(bundle, spec, X)
    mu, sd = _objective_moments(bundle, X)
    return log_expected_improvement(mu, sd, bundle.best_feasible) + log_dpof(bundle, spec, X)


def acquisition_value(bundle: SurrogateBundle, spec: AcquisitionSpec, X):
    """Exact (non-log) value used for reporting."""
    if not bundle.has_incumbent:
        return dpof(bundle, spec, X)
    return eicb(bundle, spec, X)
