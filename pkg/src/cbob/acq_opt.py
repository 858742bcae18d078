"""Acquisition maximization: seeded Sobol probing followed by bounded L-BFGS-B refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .acquisition import sobol_probes

FD_STEP = 1e-6


class AcquisitionOptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    multistarts: int = 10
    local_iterations: int = 1000
    probe_count: int = 4096
    seed: int = 0

    def __post_init__(self):
        if min(self.multistarts, self.local_iterations, self.probe_count) < 1:
            raise ValueError("optimizer counts must all be >= 1")


def _batched(acq, vectorized: bool):
    if vectorized:
        return lambda X: np.asarray(acq(X), dtype=float).reshape(-1)
    return lambda X: np.array([float(acq(x)) for x in X])


def _local_objective(f, lb, width):
    """Negated acquisition in unit coordinates with a central-difference gradient.

    Perturbed points are pulled back inside [0, 1] so nothing is ever
    evaluated outside the box.
    """
    n = lb.size

    def fun(u):
        u = np.clip(u, 0.0, 1.0)
        up = np.minimum(u + FD_STEP, 1.0)
        dn = np.maximum(u - FD_STEP, 0.0)
        U = np.vstack([u, np.tile(u, (2 * n, 1))])
        U[1 + np.arange(n), np.arange(n)] = up
        U[1 + n + np.arange(n), np.arange(n)] = dn
        vals = f(lb + U * width)
        if not np.all(np.isfinite(vals)):
            if not np.isfinite(vals[0]):
                return 1e300, np.zeros(n)
            vals = np.where(np.isfinite(vals), vals, vals[0])
        grad = (vals[1 : n + 1] - vals[n + 1 :]) / (up - dn)
        return -vals[0], -grad

    return fun


def maximize_acquisition(acq, box, config: OptimizerConfig = OptimizerConfig(), vectorized: bool = True):
    """Maximize ``acq`` over ``box`` (shape ``(n, 2)`` of lower/upper bounds).

    ``acq`` maps an ``(k, n)`` array of points to ``k`` values (or a single
    point to a value when ``vectorized=False``).  Non-finite probe values are
    discarded.  Returns ``(x, value)``; the value is never below the best
    probe.
    """
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] < box[:, 0]):
        raise ValueError("box must be an (n, 2) array with lower <= upper")
    f = _batched(acq, vectorized)
    lb, ub = box[:, 0], box[:, 1]
    width = ub - lb

    probes = sobol_probes(box, config.probe_count, config.seed)
    vals = f(probes)
    finite = np.isfinite(vals)
    if not finite.any():
        raise AcquisitionOptimizerError("acquisition is non-finite at every probe")
    ranked = np.where(finite, vals, -np.inf)
    order = np.argsort(-ranked, kind="stable")
    best_i = int(order[0])
    best_x, best_v = probes[best_i].copy(), float(vals[best_i])

    fun = _local_objective(f, lb, np.where(width > 0, width, 1.0))
    starts = [int(i) for i in order[: config.multistarts] if finite[i]]
    for i in starts:
        u0 = np.where(width > 0, (probes[i] - lb) / np.where(width > 0, width, 1.0), 0.0)
        res = optimize.minimize(
            fun,
            u0,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * lb.size,
            options={"maxiter": config.local_iterations},
        )
        x = np.clip(lb + np.clip(res.x, 0.0, 1.0) * width, lb, ub)
        v = float(f(x[None, :])[0])
        if np.isfinite(v) and v > best_v:
            best_x, best_v = x, v
    return np.clip(best_x, lb, ub), best_v
