"""Synthetic constrained benchmarks, observability masking and initial designs."""

from __future__ import annotations

import ast
import math
import operator
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .acquisition import sobol_probes
from .ep import ConstraintObservation

SCENARIOS = ("FULL", "S1", "S2")
INITIAL_PER_DIM = 11


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """A box-constrained problem ``min f(x) s.t. g_i(x) <= 0``.

    ``scenario`` controls what an evaluation reveals at infeasible points:
    FULL shows everything, S1 hides the objective, S2 hides the objective
    and the values of violated constraints.
    """

    name: str
    bounds: np.ndarray
    objective: Callable[[np.ndarray], float]
    constraints: tuple[Callable[[np.ndarray], float], ...]
    scenario: str = "S1"
    integer_dims: tuple[int, ...] = ()
    known_feasible: np.ndarray | None = None
    description: str = ""

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2 or not np.all(np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
            raise ProblemError(f"{self.name}: bounds must be finite (n, 2) with lower < upper")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        scenario = self.scenario.upper()
        if scenario not in SCENARIOS:
            raise ProblemError(f"{self.name}: scenario must be one of {SCENARIOS}")
        object.__setattr__(self, "scenario", scenario)
        object.__setattr__(self, "integer_dims", tuple(int(i) for i in self.integer_dims))
        if self.known_feasible is not None:
            kf = np.asarray(self.known_feasible, dtype=float)
            object.__setattr__(self, "known_feasible", kf)
            gs = [c(self.round(kf)) for c in self.constraints]
            if not all(g <= 0 for g in gs):
                raise ProblemError(f"{self.name}: registered feasible point violates constraints {gs}")

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def round(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        for i in self.integer_dims:
            x[i] = np.round(x[i])
        return x

    def with_scenario(self, scenario: str) -> ProblemSpec:
        return ProblemSpec(
            self.name, self.bounds, self.objective, self.constraints, scenario,
            self.integer_dims, self.known_feasible, self.description,
        )


@dataclass(frozen=True)
class EvaluationRecord:
    x: np.ndarray
    feasible: bool
    objective: float | None
    constraint_obs: tuple[ConstraintObservation, ...] = field(default=())

    @property
    def objective_observed(self) -> bool:
        return self.objective is not None


def evaluate(spec: ProblemSpec, x) -> EvaluationRecord:
    """Evaluate the true functions once and apply the scenario's observability mask."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (spec.dim,):
        raise ProblemError(f"{spec.name}: expected a point of dimension {spec.dim}, got shape {x.shape}")
    lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
    tol = 1e-12 * np.maximum(1.0, np.abs(spec.bounds).max(1))
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise ProblemError(f"{spec.name}: point {x} lies outside the box")
    x = spec.round(np.clip(x, lo, hi))
    f = float(spec.objective(x))
    gs = [float(c(x)) for c in spec.constraints]
    feasible = all(g <= 0 for g in gs)
    if spec.scenario == "FULL" or feasible:
        return EvaluationRecord(x, feasible, f, tuple(ConstraintObservation.measured(x, g) for g in gs))
    if spec.scenario == "S1":
        obs = tuple(ConstraintObservation.measured(x, g) for g in gs)
    else:
        obs = tuple(
            ConstraintObservation.violated(x) if g > 0 else ConstraintObservation.measured(x, g) for g in gs
        )
    return EvaluationRecord(x, False, None, obs)


def design_seed(problem_name: str, seed: int) -> int:
    """Initial-design seed shared by every algorithm run on (problem, seed)."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(problem_name.encode())])
    return int(ss.generate_state(1)[0])


def sobol_initial_design(spec: ProblemSpec, seed: int, count: int | None = None) -> list[EvaluationRecord]:
    count = INITIAL_PER_DIM * spec.dim if count is None else count
    pts = sobol_probes(spec.bounds, count, design_seed(spec.name, seed))
    return [evaluate(spec, p) for p in pts]


def uniform_initial_design(spec: ProblemSpec, seed: int, count: int | None = None) -> list[EvaluationRecord]:
    count = INITIAL_PER_DIM * spec.dim if count is None else count
    rng = np.random.default_rng(design_seed(spec.name, seed))
    pts = rng.uniform(spec.bounds[:, 0], spec.bounds[:, 1], size=(count, spec.dim))
    return [evaluate(spec, p) for p in pts]


# --- benchmark functions -------------------------------------------------------------


def keane_bump(x: np.ndarray) -> float:
    c = np.cos(x)
    i = np.arange(1, x.size + 1)
    denom = math.sqrt(float(np.sum(i * x * x)))
    if denom == 0.0:
        return 0.0
    return -abs(float(np.sum(c**4) - 2.0 * np.prod(c**2)) / denom)


def ackley(x: np.ndarray, a: float = 20.0, b: float = 0.2, c: float = 2 * math.pi) -> float:
    n = x.size
    return float(
        -a * math.exp(-b * math.sqrt(float(np.sum(x * x)) / n))
        - math.exp(float(np.sum(np.cos(c * x))) / n)
        + a
        + math.e
    )


# welded beam (h, l, t, b); constants as in the usual GA-constraint-handling formulation
_WB_P, _WB_L, _WB_TAU_MAX, _WB_SIGMA_MAX = 6000.0, 14.0, 13600.0, 30000.0


def welded_beam_cost(x):
    h, l, t, b = x
    return 1.10471 * h * h * l + 0.04811 * t * b * (14.0 + l)


def _welded_beam_tau(x):
    h, l, t, b = x
    tau1 = _WB_P / (math.sqrt(2.0) * h * l)
    M = _WB_P * (_WB_L + 0.5 * l)
    R = math.sqrt(0.25 * (l * l + (h + t) ** 2))
    J = 2.0 * (math.sqrt(2.0) * h * l * (l * l / 12.0 + 0.25 * (h + t) ** 2))
    tau2 = M * R / J
    return math.sqrt(tau1 * tau1 + tau1 * tau2 * l / R + tau2 * tau2)


def welded_beam_constraints():
    return (
        lambda x: _welded_beam_tau(x) - _WB_TAU_MAX,
        lambda x: 504000.0 / (x[2] ** 2 * x[3]) - _WB_SIGMA_MAX,
        lambda x: x[0] - x[3],
        lambda x: _WB_P - 64746.022 * (1.0 - 0.0282346 * x[2]) * x[2] * x[3] ** 3,
        lambda x: 2.1952 / (x[2] ** 3 * x[3]) - 0.25,
    )


PVD_THICKNESS_STEP = 0.0625


def pressure_vessel_cost(x):
    ts, th = PVD_THICKNESS_STEP * x[0], PVD_THICKNESS_STEP * x[1]
    r, l = x[2], x[3]
    return 0.6224 * ts * r * l + 1.7781 * th * r * r + 3.1661 * ts * ts * l + 19.84 * ts * ts * r


def pressure_vessel_constraints():
    s = PVD_THICKNESS_STEP
    return (
        lambda x: -s * x[0] + 0.0193 * x[2],
        lambda x: -s * x[1] + 0.00954 * x[2],
        lambda x: -math.pi * x[2] ** 2 * x[3] - (4.0 / 3.0) * math.pi * x[2] ** 3 + 1296000.0,
        lambda x: x[3] - 240.0,
    )


def illustrative_1d(x) -> float:
    x = float(np.asarray(x).reshape(-1)[0])
    return math.cos(5 * x) - math.sin(x) * math.sin(2 * x)


def hlgp_demo_constraint(x) -> float:
    """Sinusoidal band of half-width 0.3: feasible (<= 0) and connected across the unit square."""
    return abs(float(x[1]) - 0.5 - 0.4 * math.sin(2.0 * math.pi * float(x[0]))) - 0.3


def hlgp_demo_objective(x) -> float:
    return float((x[0] - 0.8) ** 2 + (x[1] - 0.3) ** 2)


HLGP_DEMO_GRID = np.array([[a, b] for a in np.linspace(0, 1, 6) for b in np.linspace(0, 1, 6)])


def make_kbf(dimension: int = 10) -> ProblemSpec:
    n = int(dimension)
    return ProblemSpec(
        "kbf",
        np.tile([0.0, 10.0], (n, 1)),
        keane_bump,
        (lambda x: 0.75 - float(np.prod(x)), lambda x: float(np.sum(x)) - 7.5 * n),
        "S1",
        known_feasible=np.full(n, 5.0),
        description=f"{n}-D Keane bump function, 2 constraints",
    )


def make_ackley(dimension: int = 10) -> ProblemSpec:
    n = int(dimension)
    return ProblemSpec(
        "ackley",
        np.tile([-5.0, 5.0], (n, 1)),
        ackley,
        (lambda x: float(np.sum(x)),),
        "S2",
        known_feasible=np.zeros(n),
        description=f"{n}-D Ackley (a=20, b=0.2, c=2pi) with sum(x) <= 0",
    )


def make_wbd() -> ProblemSpec:
    return ProblemSpec(
        "wbd",
        np.array([[0.125, 5.0], [0.1, 10.0], [0.1, 10.0], [0.125, 5.0]]),
        welded_beam_cost,
        welded_beam_constraints(),
        "S1",
        known_feasible=np.array([1.0, 4.0, 8.0, 1.0]),
        description="4-D welded beam design, 5 constraints",
    )


def make_pvd() -> ProblemSpec:
    return ProblemSpec(
        "pvd",
        np.array([[0.0, 20.0], [0.0, 20.0], [10.0, 50.0], [150.0, 200.0]]),
        pressure_vessel_cost,
        pressure_vessel_constraints(),
        "S2",
        integer_dims=(0, 1),
        known_feasible=np.array([16.0, 10.0, 45.0, 180.0]),
        description="4-D pressure vessel design, 4 constraints; x1, x2 are integer multiples of 0.0625 in",
    )


def make_illustrative1d(scenario: str = "FULL") -> ProblemSpec:
    name = "illustrative1d" if scenario.upper() == "FULL" else "illustrative1d-pocop"
    return ProblemSpec(
        name,
        np.array([[0.0, 10.0]]),
        illustrative_1d,
        (illustrative_1d,),
        scenario,
        known_feasible=np.array([4.5]),
        description="1-D cos(5x) - sin(x) sin(2x) as both objective and constraint",
    )


def make_hlgp_demo2d() -> ProblemSpec:
    return ProblemSpec(
        "hlgp-demo2d",
        np.array([[0.0, 1.0], [0.0, 1.0]]),
        hlgp_demo_objective,
        (hlgp_demo_constraint,),
        "S2",
        known_feasible=np.array([0.25, 0.9]),
        description="2-D sinusoidal-band constraint observed on a 6x6 grid (HLGP vs GPC comparison)",
    )


_REGISTRY: dict[str, Callable[..., ProblemSpec]] = {
    "kbf": make_kbf,
    "ackley": make_ackley,
    "wbd": make_wbd,
    "pvd": make_pvd,
    "illustrative1d": lambda: make_illustrative1d("FULL"),
    "illustrative1d-pocop": lambda: make_illustrative1d("S2"),
    "hlgp-demo2d": make_hlgp_demo2d,
}


def problem_names() -> list[str]:
    return list(_REGISTRY)


def get_problem(name: str, **options) -> ProblemSpec:
    key = name.lower()
    if key not in _REGISTRY:
        raise ProblemError(f"unknown problem {name!r}; known: {', '.join(_REGISTRY)}")
    try:
        return _REGISTRY[key](**options)
    except TypeError as exc:
        raise ProblemError(f"bad options for {name!r}: {exc}") from exc


def builtin_problems() -> list[ProblemSpec]:
    return [factory() for factory in _REGISTRY.values()]


# --- declarative problems -----------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _flatten(args):
    out = []
    for a in args:
        out.extend(np.atleast_1d(a).tolist())
    return out


_FUNCS = {
    "cos": np.cos,
    "sin": np.sin,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sum": lambda *a: float(np.sum(_flatten(a))),
    "prod": lambda *a: float(np.prod(_flatten(a))),
}
_CONSTS = {"pi": math.pi, "e": math.e}


def compile_expression(source: str, variables: Sequence[str]) -> Callable[[np.ndarray], float]:
    """Compile an arithmetic expression over named variables into ``f(x) -> float``.

    Supported: + - * / ** %, unary minus, numbers, ``pi``/``e``, the
    functions cos sin exp sqrt abs sum prod, the variable names, and ``x``
    (the whole point, indexable as ``x[i]``).
    """
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ProblemError(f"cannot parse expression {source!r}: {exc.msg}") from exc
    names = list(variables)

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return check(node.left) and check(node.right)
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return check(node.operand)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return True
        if isinstance(node, ast.Name):
            if node.id in names or node.id in _CONSTS or node.id == "x":
                return True
            raise ProblemError(f"unknown name {node.id!r} in {source!r}")
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            if node.keywords:
                raise ProblemError(f"keyword arguments are not allowed in {source!r}")
            return all(check(a) for a in node.args)
        if isinstance(node, ast.Subscript) and isinstance(node.value, ast.Name) and node.value.id == "x":
            return check(node.slice)
        raise ProblemError(f"unsupported syntax {type(node).__name__} in {source!r}")

    check(tree)

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left, env), ev(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](ev(node.operand, env))
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](*(ev(a, env) for a in node.args))
        if isinstance(node, ast.Subscript):
            return env["x"][int(ev(node.slice, env))]
        raise AssertionError("unreachable")

    def f(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        env = dict(_CONSTS)
        env.update(zip(names, x))
        env["x"] = x
        return float(ev(tree, env))

    return f


def problem_from_dict(data: dict, source: str = "<problem>") -> ProblemSpec:
    allowed = {"name", "variables", "lower", "upper", "objective", "constraints", "scenario", "integer",
               "known_feasible", "description"}
    unknown = set(data) - allowed
    if unknown:
        raise ProblemError(f"{source}: unknown keys {sorted(unknown)}")
    for key in ("name", "variables", "lower", "upper", "objective", "constraints"):
        if key not in data:
            raise ProblemError(f"{source}: missing key {key!r}")
    variables = list(data["variables"])
    lower, upper = list(data["lower"]), list(data["upper"])
    if not (len(variables) == len(lower) == len(upper)):
        raise ProblemError(f"{source}: variables, lower and upper must have equal length")
    integer = [variables.index(v) if isinstance(v, str) else int(v) for v in data.get("integer", [])]
    return ProblemSpec(
        str(data["name"]),
        np.column_stack([lower, upper]),
        compile_expression(data["objective"], variables),
        tuple(compile_expression(c, variables) for c in data["constraints"]),
        data.get("scenario", "S1"),
        integer_dims=tuple(integer),
        known_feasible=data.get("known_feasible"),
        description=data.get("description", ""),
    )


def load_problem_file(path) -> ProblemSpec:
    from .config import load_toml

    path = Path(path)
    return problem_from_dict(load_toml(path), str(path))
