"""Plot-ready data behind the illustrative figures.

Each ``figure_*`` function returns a mapping of file name to a column
table (``dict`` of equal-length arrays); ``write_tables`` stores them as CSV.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy import ndimage

from .acquisition import (
    AcquisitionSpec,
    Emub,
    Pob,
    SurrogateBundle,
    adapt_gamma,
    dpof,
    eicb,
)
from .ep import ConstraintObservation, fit_gpc, fit_hlgp
from .gp import GpTrainingSet, gp_fit
from .problems import HLGP_DEMO_GRID, hlgp_demo_constraint, illustrative_1d

FIGURES = ("fig1", "fig2", "fig3", "figB1")

# toy 1-D design: two feasible and four infeasible points
FIG1_FEASIBLE = (4.25, 4.7)
FIG1_INFEASIBLE = (2.5, 3.7, 4.2, 5.0)
FIG1_RANGE = (2.5, 5.0)
FIG1_STEP = 1e-3
FIG1_BETAS = (0.0, 0.5, 1.0, 1.96)
FIGB1_BETAS = (0.5, 1.0, 1.96)
FIGB1_GAMMAS = (0.1, 1.0, "adapt")
FIG3_RESOLUTION = 200


def fig1_points() -> np.ndarray:
    return np.array(sorted(FIG1_FEASIBLE + FIG1_INFEASIBLE))


def fig1_grid() -> np.ndarray:
    lo, hi = FIG1_RANGE
    return np.linspace(lo, hi, int(round((hi - lo) / FIG1_STEP)) + 1)


def fig1_surrogate(seed: int = 0):
    """GPR on the fully observed six-point toy design (objective and constraint coincide)."""
    X = fig1_points()
    y = np.array([illustrative_1d(x) for x in X])
    return gp_fit(GpTrainingSet.noise_free(X.reshape(-1, 1), y), seed=seed)


def fig1_bundle(seed: int = 0) -> SurrogateBundle:
    model = fig1_surrogate(seed)
    y = model.train.y
    best = float(y[y <= 0].min())
    return SurrogateBundle(model, [model], best)


def figure_fig1(seed: int = 0) -> dict[str, dict]:
    bundle = fig1_bundle(seed)
    model = bundle.objective
    x = fig1_grid()
    X = x.reshape(-1, 1)
    mu, var = model.predict(X)
    surrogate = {
        "x": x,
        "true_g": np.array([illustrative_1d(v) for v in x]),
        "mean": mu,
        "std": np.sqrt(var),
        "eic": eicb(bundle, AcquisitionSpec.eic(), X),
        "eicb": eicb(bundle, AcquisitionSpec("EICB", Pob(1.96)), X),
    }
    curves = {"beta": [], "x": [], "dpof": []}
    for beta in FIG1_BETAS:
        spec = AcquisitionSpec.eic() if beta == 0 else AcquisitionSpec("EICB", Pob(beta))
        curves["beta"].extend([beta] * x.size)
        curves["x"].extend(x)
        curves["dpof"].extend(dpof(bundle, spec, X))
    design = {"x": fig1_points(), "g": model.train.y}
    return {"fig1_surrogate.csv": surrogate, "fig1_dpof.csv": curves, "fig1_design.csv": design}


def fig2_observations() -> list[ConstraintObservation]:
    obs = [ConstraintObservation.measured([x], illustrative_1d(x)) for x in FIG1_FEASIBLE]
    obs += [ConstraintObservation.violated([x]) for x in FIG1_INFEASIBLE]
    return obs


def figure_fig2(seed: int = 0) -> dict[str, dict]:
    obs = fig2_observations()
    hlgp = fit_hlgp(obs, seed=seed)
    gpc = fit_gpc([(o.x, 1 if o.is_flag else -1) for o in obs], seed=seed)
    x = fig1_grid()
    X = x.reshape(-1, 1)
    hm, hv = hlgp.predict(X)
    cm, cv = gpc.predict(X)
    curves = {
        "x": x,
        "true_g": np.array([illustrative_1d(v) for v in x]),
        "hlgp_mean": hm,
        "hlgp_std": np.sqrt(hv),
        "gpc_latent_mean": cm,
        "gpc_latent_std": np.sqrt(cv),
        "gpc_p_feasible": 1.0 - gpc.predict_proba(X),
    }
    design = {
        "x": np.array([o.x[0] for o in obs]),
        "value": np.array([np.nan if o.is_flag else o.value for o in obs]),
        "violated_flag": np.array([int(o.is_flag) for o in obs]),
    }
    return {"fig2_models.csv": curves, "fig2_design.csv": design}


def fig3_models(seed: int = 0):
    """HLGP and GPC fitted to the 36-point design of the 2-D band constraint."""
    vals = np.array([hlgp_demo_constraint(p) for p in HLGP_DEMO_GRID])
    obs = [
        ConstraintObservation.measured(p, v) if v <= 0 else ConstraintObservation.violated(p)
        for p, v in zip(HLGP_DEMO_GRID, vals)
    ]
    labels = [(p, -1 if v <= 0 else 1) for p, v in zip(HLGP_DEMO_GRID, vals)]
    return fit_hlgp(obs, seed=seed), fit_gpc(labels, seed=seed)


def fig3_grid(resolution: int = FIG3_RESOLUTION) -> tuple[np.ndarray, np.ndarray]:
    """Cell centres of a ``resolution x resolution`` grid over the unit square."""
    c = (np.arange(resolution) + 0.5) / resolution
    a, b = np.meshgrid(c, c, indexing="ij")
    return c, np.column_stack([a.ravel(), b.ravel()])


def count_components(mask: np.ndarray) -> int:
    """Number of 4-connected components of a boolean grid."""
    _, n = ndimage.label(mask)
    return int(n)


def fig3_regions(seed: int = 0, resolution: int = FIG3_RESOLUTION) -> dict:
    hlgp, gpc = fig3_models(seed)
    _, P = fig3_grid(resolution)
    shape = (resolution, resolution)
    true_g = np.array([hlgp_demo_constraint(p) for p in P]).reshape(shape)
    hm, hv = hlgp.predict(P)
    p_feas = (1.0 - gpc.predict_proba(P)).reshape(shape)
    truth = true_g <= 0
    hl = hm.reshape(shape) <= 0
    gc = p_feas >= 0.5
    return {
        "points": P,
        "true_g": true_g,
        "hlgp_mean": hm.reshape(shape),
        "hlgp_std": np.sqrt(hv).reshape(shape),
        "gpc_p_feasible": p_feas,
        "true_components": count_components(truth),
        "hlgp_components": count_components(hl),
        "gpc_components": count_components(gc),
        "hlgp_coverage": float((hl & truth).sum() / truth.sum()),
        "gpc_coverage": float((gc & truth).sum() / truth.sum()),
        "hlgp": hlgp,
        "gpc": gpc,
    }


def figure_fig3(seed: int = 0) -> dict[str, dict]:
    r = fig3_regions(seed)
    P = r["points"]
    grid = {
        "x1": P[:, 0],
        "x2": P[:, 1],
        "true_g": r["true_g"].ravel(),
        "hlgp_mean": r["hlgp_mean"].ravel(),
        "hlgp_std": r["hlgp_std"].ravel(),
        "gpc_p_feasible": r["gpc_p_feasible"].ravel(),
    }
    vals = np.array([hlgp_demo_constraint(p) for p in HLGP_DEMO_GRID])
    design = {
        "x1": HLGP_DEMO_GRID[:, 0],
        "x2": HLGP_DEMO_GRID[:, 1],
        "value": np.where(vals <= 0, vals, np.nan),
        "violated_flag": (vals > 0).astype(int),
    }
    stats = {
        "region": ["true", "hlgp_0_level", "gpc_0.5_probability"],
        "components": [r["true_components"], r["hlgp_components"], r["gpc_components"]],
        "coverage_of_true": [1.0, r["hlgp_coverage"], r["gpc_coverage"]],
    }
    return {"fig3_grid.csv": grid, "fig3_design.csv": design, "fig3_regions.csv": stats}


def figure_figB1(seed: int = 0) -> dict[str, dict]:
    bundle = fig1_bundle(seed)
    model = bundle.constraints[0]
    x = fig1_grid()
    X = x.reshape(-1, 1)
    box = np.array([[0.0, 10.0]])
    table = {"beta": [], "gamma": [], "gamma_value": [], "x": [], "dpof": []}
    for beta in FIGB1_BETAS:
        for gamma in FIGB1_GAMMAS:
            value = adapt_gamma(model, beta, box, seed=seed) if gamma == "adapt" else gamma
            spec = AcquisitionSpec("EICB", Emub(beta, value))
            table["beta"].extend([beta] * x.size)
            table["gamma"].extend([str(gamma)] * x.size)
            table["gamma_value"].extend([value] * x.size)
            table["x"].extend(x)
            table["dpof"].extend(dpof(bundle, spec, X))
    return {"figB1_dpof.csv": table}


def build_figure(figure_id: str, seed: int = 0) -> dict[str, dict]:
    builders = {"fig1": figure_fig1, "fig2": figure_fig2, "fig3": figure_fig3, "figB1": figure_figB1}
    if figure_id not in builders:
        raise KeyError(f"unknown figure {figure_id!r}; choose from {', '.join(FIGURES)}")
    return builders[figure_id](seed)


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def write_tables(tables: dict[str, dict], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, table in tables.items():
        cols = list(table)
        data = [list(table[c]) for c in cols]
        n = {len(d) for d in data}
        if len(n) != 1:
            raise ValueError(f"{name}: columns have unequal lengths")
        path = out_dir / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in zip(*data):
                w.writerow([_cell(v) for v in row])
        paths.append(path)
    return paths
