"""The CBOB loop, the EIC baseline, trajectory recording and run metrics.

Surrogates are fitted in unit-cube coordinates and refitted from scratch
every iteration.  Every random stream is derived from ``(seed, k)`` so a run
is a pure function of its configuration.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np
from scipy import linalg

from .acq_opt import AcquisitionOptimizerError, OptimizerConfig, maximize_acquisition
from .acquisition import (
    AcquisitionSpec,
    Emub,
    Pob,
    SurrogateBundle,
    acquisition_value,
    log_acquisition,
    resolve_gammas,
)
from .ep import ConstraintObservation, EpConfig, fit_gpc, fit_hlgp
from .gp import GpModelError, GpTrainingSet, gp_fit
from .problems import (
    EvaluationRecord,
    ProblemSpec,
    evaluate,
    get_problem,
    load_problem_file,
    sobol_initial_design,
    uniform_initial_design,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("CBOB", "EIC")
CONSTRAINT_MODELS = ("HLGP", "GPC", "GPR")
INIT_DESIGNS = ("sobol", "uniform")
RETRY_NOISE = 1e-6

# stream tags for derived seeds
_OBJECTIVE, _CONSTRAINT, _GAMMA, _OPTIMIZER = 1, 2, 3, 4


class RunConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """One (problem, algorithm, seed) run.

    ``problem`` is a registry name, ``file:<path>`` for a declarative problem
    file, or a ``ProblemSpec``.  ``algorithm`` CBOB maximizes EI x DPOF with
    ``exploration``; EIC maximizes EI x POF and takes no exploration.
    """

    problem: Union[str, ProblemSpec] = "illustrative1d"
    algorithm: str = "CBOB"
    constraint_model: str = "HLGP"
    exploration: Union[None, Pob, Emub] = field(default_factory=Pob)
    lam: float = 0.0
    budget: int = 100
    seed: int = 0
    init_design: str = "sobol"
    n_init: int | None = None
    problem_options: dict = field(default_factory=dict)
    scenario: str | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    ep: EpConfig = field(default_factory=EpConfig)
    gp_restarts: int = 5
    label: str | None = None
    timing: bool = False

    def __post_init__(self):
        algorithm = self.algorithm.upper()
        model = self.constraint_model.upper()
        object.__setattr__(self, "algorithm", algorithm)
        object.__setattr__(self, "constraint_model", model)
        object.__setattr__(self, "init_design", self.init_design.lower())
        if algorithm not in ALGORITHMS:
            raise RunConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if model not in CONSTRAINT_MODELS:
            raise RunConfigError(f"constraint_model must be one of {CONSTRAINT_MODELS}, got {self.constraint_model!r}")
        if self.init_design not in INIT_DESIGNS:
            raise RunConfigError(f"init_design must be one of {INIT_DESIGNS}")
        if algorithm == "EIC":
            object.__setattr__(self, "exploration", None)
        elif self.exploration is None:
            raise RunConfigError("CBOB needs an exploration function (POB or EMUB)")
        if not isinstance(self.budget, int) or self.budget < 0:
            raise RunConfigError("budget must be a nonnegative integer")
        if self.n_init is not None and self.n_init < 1:
            raise RunConfigError("n_init must be >= 1")
        if self.gp_restarts < 1:
            raise RunConfigError("gp_restarts must be >= 1")
        try:
            self.acquisition
        except ValueError as exc:
            raise RunConfigError(str(exc)) from exc

    @property
    def acquisition(self) -> AcquisitionSpec:
        if self.algorithm == "EIC":
            return AcquisitionSpec.eic(self.lam)
        return AcquisitionSpec("EICB", self.exploration, self.lam)

    @property
    def name(self) -> str:
        return self.label or f"{self.algorithm}-{self.constraint_model}"

    def resolve_problem(self) -> ProblemSpec:
        if isinstance(self.problem, ProblemSpec):
            spec = self.problem
        elif self.problem.startswith("file:"):
            spec = load_problem_file(self.problem[5:])
        else:
            spec = get_problem(self.problem, **self.problem_options)
        if self.scenario is not None:
            spec = spec.with_scenario(self.scenario)
        if self.constraint_model == "GPR" and spec.scenario == "S2":
            raise RunConfigError("constraint model GPR needs observed constraint values; scenario S2 hides them")
        return spec


@dataclass
class Dataset:
    records: list[EvaluationRecord]
    acquired_from: int

    def append(self, record: EvaluationRecord):
        self.records.append(record)

    @property
    def incumbent(self) -> EvaluationRecord | None:
        best = None
        for r in self.records:
            if r.feasible and (best is None or r.objective < best.objective):
                best = r
        return best

    @property
    def best_feasible_objective(self) -> float | None:
        inc = self.incumbent
        return None if inc is None else inc.objective

    @property
    def acquired(self) -> list[EvaluationRecord]:
        return self.records[self.acquired_from :]


@dataclass(frozen=True)
class TrajectoryRow:
    """``k = 0`` summarizes the initial design (its incumbent); ``k >= 1`` are acquisitions."""

    k: int
    x: np.ndarray | None
    feasible: bool
    f_obs: float | None
    best_feasible: float | None
    acq_value: float | None
    wall_ms: float | None = None


@dataclass
class Trajectory:
    name: str
    seed: int
    dim: int
    rows: list[TrajectoryRow] = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    dataset: Dataset | None = None

    @property
    def acquisitions(self) -> list[TrajectoryRow]:
        return [r for r in self.rows if r.k >= 1]

    @property
    def final_best(self) -> float:
        b = self.rows[-1].best_feasible if self.rows else None
        return math.inf if b is None else b

    @property
    def rof(self) -> float:
        acq = self.acquisitions
        if not acq:
            return math.nan
        return sum(r.feasible for r in acq) / len(acq)


def stream_seed(seed: int, k: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(k), int(tag)]).generate_state(1)[0] % (2**31))


def _to_unit(x, lb, width):
    return (np.asarray(x, dtype=float) - lb) / width


def _objective_training(dataset: Dataset, lb, width, noise: float):
    obs = [r for r in dataset.records if r.objective is not None]
    if not obs:
        return None
    X = np.vstack([_to_unit(r.x, lb, width) for r in obs])
    y = np.array([r.objective for r in obs])
    return GpTrainingSet(X, y, np.full(y.size, noise * max(float(np.var(y)), 1.0)))


def _fit_constraint(model: str, i: int, dataset: Dataset, lb, width, ep: EpConfig, restarts: int, seed: int,
                    noise: float):
    recs = dataset.records
    X = [_to_unit(r.x, lb, width) for r in recs]
    obs = [r.constraint_obs[i] for r in recs]
    if model == "HLGP":
        unit_obs = [
            ConstraintObservation.violated(x) if o.is_flag else ConstraintObservation.measured(x, o.value)
            for x, o in zip(X, obs)
        ]
        return fit_hlgp(unit_obs, ep, seed)
    if model == "GPC":
        labels = [(x, 1 if (o.is_flag or o.value > 0) else -1) for x, o in zip(X, obs)]
        return fit_gpc(labels, ep, seed)
    if any(o.is_flag for o in obs):
        raise RunConfigError("GPR constraint model cannot use violation flags")
    y = np.array([o.value for o in obs])
    train = GpTrainingSet(np.vstack(X), y, np.full(y.size, noise * max(float(np.var(y)), 1.0)))
    return gp_fit(train, restarts, seed)


def _fit_surrogates(cfg: RunConfig, spec: ProblemSpec, dataset: Dataset, k: int, retry: bool) -> SurrogateBundle:
    lb, width = spec.bounds[:, 0], spec.bounds[:, 1] - spec.bounds[:, 0]
    noise = RETRY_NOISE if retry else 0.0
    ep = replace(cfg.ep, sigma=max(cfg.ep.sigma, math.sqrt(RETRY_NOISE))) if retry else cfg.ep
    train = _objective_training(dataset, lb, width, noise)
    objective = None if train is None else gp_fit(train, cfg.gp_restarts, stream_seed(cfg.seed, k, _OBJECTIVE))
    constraints = [
        _fit_constraint(
            cfg.constraint_model, i, dataset, lb, width, ep, cfg.gp_restarts,
            stream_seed(cfg.seed, k, _CONSTRAINT * 1000 + i), noise,
        )
        for i in range(spec.n_constraints)
    ]
    best = dataset.best_feasible_objective
    return SurrogateBundle(objective if best is not None else None, constraints, best)


def initial_dataset(cfg: RunConfig, spec: ProblemSpec) -> Dataset:
    design = sobol_initial_design if cfg.init_design == "sobol" else uniform_initial_design
    records = design(spec, cfg.seed, cfg.n_init)
    return Dataset(list(records), len(records))


def run(cfg: RunConfig, callback: Callable | None = None) -> Trajectory:
    """Execute one seeded run and return its trajectory.

    ``callback(k, bundle, dataset)`` is invoked after the surrogates of
    iteration ``k`` are fitted, before the acquisition is maximized.
    """
    spec = cfg.resolve_problem()
    lb, ub = spec.bounds[:, 0], spec.bounds[:, 1]
    width = ub - lb
    unit_box = np.tile([0.0, 1.0], (spec.dim, 1))
    acq_spec = cfg.acquisition

    t0 = time.perf_counter()
    dataset = initial_dataset(cfg, spec)
    traj = Trajectory(cfg.name, cfg.seed, spec.dim, dataset=dataset)
    inc = dataset.incumbent
    traj.rows.append(
        TrajectoryRow(
            0,
            None if inc is None else inc.x,
            inc is not None,
            None if inc is None else inc.objective,
            None if inc is None else inc.objective,
            None,
            (time.perf_counter() - t0) * 1e3 if cfg.timing else None,
        )
    )

    for k in range(1, cfg.budget + 1):
        t0 = time.perf_counter()
        bundle = None
        for retry in (False, True):
            try:
                bundle = _fit_surrogates(cfg, spec, dataset, k, retry)
                break
            except (GpModelError, linalg.LinAlgError, FloatingPointError) as exc:
                if retry:
                    traj.status = "error"
                    traj.message = f"iteration {k}: surrogate fit failed after retry: {exc}"
                    logger.error("%s seed %d: %s", cfg.name, cfg.seed, traj.message)
                    return traj
                logger.warning("%s seed %d iteration %d: fit failed (%s), retrying", cfg.name, cfg.seed, k, exc)
        resolve_gammas(bundle, acq_spec, unit_box, seed=stream_seed(cfg.seed, k, _GAMMA))
        if callback is not None:
            callback(k, bundle, dataset)

        opt = replace(cfg.optimizer, seed=stream_seed(cfg.seed, k, _OPTIMIZER))
        try:
            u, _ = maximize_acquisition(lambda U: log_acquisition(bundle, acq_spec, U), unit_box, opt)
        except AcquisitionOptimizerError as exc:
            traj.status = "error"
            traj.message = f"iteration {k}: {exc}"
            return traj
        value = float(np.asarray(acquisition_value(bundle, acq_spec, u[None, :])).reshape(-1)[0])
        x = np.clip(lb + u * width, lb, ub)
        record = evaluate(spec, x)
        dataset.append(record)
        traj.rows.append(
            TrajectoryRow(
                k,
                record.x,
                record.feasible,
                record.objective,
                dataset.best_feasible_objective,
                value,
                (time.perf_counter() - t0) * 1e3 if cfg.timing else None,
            )
        )
    return traj


# --- metrics --------------------------------------------------------------------------


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile where +inf (no feasible point) sorts last."""
    v = np.sort(np.asarray(values, dtype=float))
    pos = q * (v.size - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, v.size - 1)
    frac = pos - lo
    if frac == 0.0 or v[lo] == v[hi]:
        return float(v[lo])
    if math.isinf(v[hi]):
        return math.inf
    return float(v[lo] + frac * (v[hi] - v[lo]))


@dataclass(frozen=True)
class RunSummary:
    runs: int
    median_bov: float
    mean_rof: float
    iterations: np.ndarray
    band_q25: np.ndarray
    band_median: np.ndarray
    band_q75: np.ndarray


def best_matrix(trajectories) -> np.ndarray:
    rows = []
    for t in trajectories:
        rows.append([math.inf if r.best_feasible is None else r.best_feasible for r in t.rows])
    return np.array(rows, dtype=float)


def metrics(trajectories) -> RunSummary:
    """Median final BOV, mean ROF and per-iteration quartile bands."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("metrics needs at least one trajectory")
    lengths = {len(t.rows) for t in trajectories}
    if len(lengths) != 1:
        raise ValueError(f"trajectories have unequal lengths {sorted(lengths)}")
    B = best_matrix(trajectories)
    iters = np.array([r.k for r in trajectories[0].rows])
    rofs = [t.rof for t in trajectories]
    mean_rof = math.nan if any(math.isnan(r) for r in rofs) else float(np.mean(rofs))
    return RunSummary(
        len(trajectories),
        quantile(B[:, -1], 0.5),
        mean_rof,
        iters,
        np.array([quantile(B[:, j], 0.25) for j in range(B.shape[1])]),
        np.array([quantile(B[:, j], 0.5) for j in range(B.shape[1])]),
        np.array([quantile(B[:, j], 0.75) for j in range(B.shape[1])]),
    )
