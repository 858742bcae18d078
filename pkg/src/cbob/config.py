"""Declarative experiment configuration (TOML) with fail-fast validation.

Example::

    problem = "ackley"
    seeds = [0, 1, 2]
    budget = 50

    [problem_options]
    dimension = 5

    [initial_design]
    kind = "sobol"
    count = 55

    [[algorithms]]
    algorithm = "CBOB"
    constraint_model = "HLGP"
    exploration = "POB"
    beta = 1.96

    [[algorithms]]
    algorithm = "EIC"
    constraint_model = "GPC"
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .acq_opt import OptimizerConfig
from .acquisition import Emub, Pob
from .driver import RunConfig, RunConfigError
from .ep import EpConfig
from .problems import ProblemError, get_problem, load_problem_file

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


def load_toml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message already carries "(at line L, column C)"
        raise ConfigError(f"{path}: {exc}") from exc


_TOP_KEYS = {
    "problem", "problem_file", "problem_options", "scenario", "seeds", "out", "workers", "budget",
    "initial_design", "optimizer", "ep", "gp_restarts", "algorithms", "timing",
}
_ALGO_KEYS = {"algorithm", "constraint_model", "exploration", "beta", "gamma", "lam", "label"}
_INIT_KEYS = {"kind", "count"}
_OPT_KEYS = {"multistarts", "local_iterations", "probe_count"}
_EP_KEYS = {"tolerance", "max_sweeps", "damping", "sigma", "alpha", "alternations", "restarts"}


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=|^\s*\[+\s*{re.escape(key)}\s*\]+", re.M)
    m = pat.search(text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


class _Checker:
    def __init__(self, source: str, text: str):
        self.source, self.text = source, text

    def fail(self, where: str, key: str, msg: str):
        line = _line_of(self.text, key)
        loc = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{loc}: {where}{key}: {msg}")

    def keys(self, table: dict, allowed: set, where: str):
        for key in table:
            if key not in allowed:
                self.fail(where, key, f"unknown key (allowed: {', '.join(sorted(allowed))})")

    def typed(self, table: dict, key: str, types, where: str, default=None):
        if key not in table:
            return default
        v = table[key]
        if isinstance(v, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
            self.fail(where, key, f"expected {_type_name(types)}, got boolean")
        if not isinstance(v, types):
            self.fail(where, key, f"expected {_type_name(types)}, got {type(v).__name__}")
        return v


def _type_name(types) -> str:
    types = types if isinstance(types, tuple) else (types,)
    names = {int: "integer", float: "number", str: "string", list: "array", dict: "table", bool: "boolean"}
    return " or ".join(names.get(t, t.__name__) for t in types)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    runs: tuple[RunConfig, ...]
    seeds: tuple[int, ...] = tuple(range(20))
    out: str | None = None
    workers: int = 1
    raw: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        names = [r.name for r in self.runs]
        if len(set(names)) != len(names):
            raise ConfigError(f"algorithm labels must be distinct, got {names}")

    def config_hash(self) -> str:
        """Content hash of everything that determines trajectories (not output dir or workers)."""
        payload = {k: v for k, v in self.raw.items() if k not in ("out", "workers", "seeds")}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def tasks(self) -> list[RunConfig]:
        return [replace(r, seed=s) for r in self.runs for s in self.seeds]


def _exploration(chk: _Checker, table: dict, where: str):
    kind = chk.typed(table, "exploration", str, where, "POB").upper()
    beta = float(chk.typed(table, "beta", (int, float), where, 1.96))
    if kind == "POB":
        if "gamma" in table:
            chk.fail(where, "gamma", "only EMUB exploration takes gamma")
        return Pob(beta)
    if kind == "EMUB":
        gamma = chk.typed(table, "gamma", (int, float, str), where, "adapt")
        try:
            return Emub(beta, gamma if isinstance(gamma, str) else float(gamma))
        except ValueError as exc:
            chk.fail(where, "gamma", str(exc))
    chk.fail(where, "exploration", f"expected 'POB' or 'EMUB', got {kind!r}")


def parse_experiment(data: dict, source: str = "<config>", text: str = "") -> ExperimentConfig:
    chk = _Checker(source, text)
    chk.keys(data, _TOP_KEYS, "")
    if ("problem" in data) == ("problem_file" in data):
        raise ConfigError(f"{source}: exactly one of 'problem' or 'problem_file' is required")
    options = chk.typed(data, "problem_options", dict, "", {})
    if "problem_file" in data:
        pfile = Path(chk.typed(data, "problem_file", str, ""))
        if not pfile.is_absolute():
            pfile = (Path(source).parent / pfile).resolve()
        problem = f"file:{pfile}"
        try:
            load_problem_file(pfile)
        except (ProblemError, ConfigError) as exc:
            chk.fail("", "problem_file", str(exc))
    else:
        problem = chk.typed(data, "problem", str, "")
        try:
            get_problem(problem, **options)
        except ProblemError as exc:
            chk.fail("", "problem", str(exc))

    seeds = chk.typed(data, "seeds", list, "", list(range(20)))
    if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        chk.fail("", "seeds", "expected an array of nonnegative integers")
    workers = chk.typed(data, "workers", int, "", 1)
    if workers < 1:
        chk.fail("", "workers", "must be >= 1")
    budget = chk.typed(data, "budget", int, "", 100)
    if budget < 0:
        chk.fail("", "budget", "must be >= 0")
    scenario = chk.typed(data, "scenario", str, "", None)
    timing = chk.typed(data, "timing", bool, "", False)
    gp_restarts = chk.typed(data, "gp_restarts", int, "", 5)

    init = chk.typed(data, "initial_design", dict, "", {})
    chk.keys(init, _INIT_KEYS, "initial_design.")
    kind = chk.typed(init, "kind", str, "initial_design.", "sobol")
    count = chk.typed(init, "count", int, "initial_design.", None)

    opt_t = chk.typed(data, "optimizer", dict, "", {})
    chk.keys(opt_t, _OPT_KEYS, "optimizer.")
    ep_t = chk.typed(data, "ep", dict, "", {})
    chk.keys(ep_t, _EP_KEYS, "ep.")
    try:
        optimizer = OptimizerConfig(**{k: chk.typed(opt_t, k, int, "optimizer.") for k in opt_t})
    except ValueError as exc:
        raise ConfigError(f"{source}: optimizer: {exc}") from exc
    ep_vals = {}
    for k in ep_t:
        types = int if k in ("max_sweeps", "alternations", "restarts") else (int, float)
        ep_vals[k] = chk.typed(ep_t, k, types, "ep.")
    try:
        ep = EpConfig(**ep_vals)
    except ValueError as exc:
        raise ConfigError(f"{source}: ep: {exc}") from exc

    algos = chk.typed(data, "algorithms", list, "", None)
    if not algos:
        raise ConfigError(f"{source}: at least one [[algorithms]] entry is required")
    runs = []
    for j, a in enumerate(algos, 1):
        where = f"algorithms[{j}]."
        if not isinstance(a, dict):
            raise ConfigError(f"{source}: algorithms[{j}] must be a table")
        chk.keys(a, _ALGO_KEYS, where)
        algorithm = chk.typed(a, "algorithm", str, where, "CBOB").upper()
        if algorithm == "EIC":
            for key in ("exploration", "beta", "gamma"):
                if key in a:
                    chk.fail(where, key, "EIC takes no exploration settings")
            exploration = None
        else:
            exploration = _exploration(chk, a, where)
        try:
            runs.append(
                RunConfig(
                    problem=problem,
                    algorithm=algorithm,
                    constraint_model=chk.typed(a, "constraint_model", str, where, "HLGP"),
                    exploration=exploration,
                    lam=float(chk.typed(a, "lam", (int, float), where, 0.0)),
                    budget=budget,
                    init_design=kind,
                    n_init=count,
                    problem_options=dict(options),
                    scenario=scenario,
                    optimizer=optimizer,
                    ep=ep,
                    gp_restarts=gp_restarts,
                    label=chk.typed(a, "label", str, where, None),
                    timing=timing,
                )
            )
            runs[-1].resolve_problem()
        except (RunConfigError, ProblemError, ValueError) as exc:
            raise ConfigError(f"{source}: algorithms[{j}]: {exc}") from exc
    try:
        return ExperimentConfig(problem, tuple(runs), tuple(seeds), data.get("out"), workers, dict(data))
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    data = load_toml(path)
    return parse_experiment(data, str(path), path.read_text())


def parse_seeds(spec: str) -> tuple[int, ...]:
    """``"0-9"``, ``"1,3,5"`` or a mix such as ``"0-4,10"``."""
    seeds = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", part)
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            if b < a:
                raise ConfigError(f"bad seed range {part!r}")
            seeds.extend(range(a, b + 1))
        elif part.isdigit():
            seeds.append(int(part))
        else:
            raise ConfigError(f"bad seed specification {part!r}")
    if not seeds:
        raise ConfigError("empty seed specification")
    return tuple(seeds)
