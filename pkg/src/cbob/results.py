"""Trajectory files, run manifests and summary tables.

A trajectory file is a header-bearing CSV named ``<algorithm>__seed<k>.csv``
with columns ``seed,k,x_1..x_n,feasible,f_obs,best_feasible,acq_value,wall_ms``.
Missing values (hidden objective, no incumbent yet, no timing) are empty
fields.  Floats are written with ``repr`` so reading a file back gives the
exact in-memory values.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import re
from pathlib import Path

import numpy as np

from .driver import RunSummary, Trajectory, TrajectoryRow, metrics

FORMAT = "cbob-trajectories/1"
MANIFEST = "manifest.json"
SUMMARY = "summary.csv"
TAIL_COLUMNS = ["feasible", "f_obs", "best_feasible", "acq_value", "wall_ms"]
_NAME_RE = re.compile(r"^(?P<name>[A-Za-z0-9_.+-]+)__seed(?P<seed>\d+)\.csv$")


class TrajectoryFormatError(ValueError):
    pass


def trajectory_filename(name: str, seed: int) -> str:
    return f"{name}__seed{seed}.csv"


def columns(dim: int) -> list[str]:
    return ["seed", "k"] + [f"x_{i}" for i in range(1, dim + 1)] + TAIL_COLUMNS


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trajectory_to_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns(traj.dim))
    for r in traj.rows:
        xs = [""] * traj.dim if r.x is None else [_fmt(float(v)) for v in r.x]
        w.writerow(
            [traj.seed, r.k] + xs
            + [_fmt(bool(r.feasible)), _fmt(r.f_obs), _fmt(r.best_feasible), _fmt(r.acq_value), _fmt(r.wall_ms)]
        )
    return buf.getvalue()


def write_trajectory(traj: Trajectory, out_dir) -> Path:
    path = Path(out_dir) / trajectory_filename(traj.name, traj.seed)
    path.write_text(trajectory_to_csv(traj))
    return path


def _num(field: str, value: str, where: str, allow_empty: bool = True):
    if value == "":
        if allow_empty:
            return None
        raise TrajectoryFormatError(f"{where}: {field} is empty")
    try:
        v = float(value)
    except ValueError:
        raise TrajectoryFormatError(f"{where}: {field} is not a number: {value!r}") from None
    if math.isnan(v):
        raise TrajectoryFormatError(f"{where}: {field} must not be NaN (use an empty field)")
    return v


def read_trajectory(path) -> Trajectory:
    """Parse and validate a trajectory file against the column schema."""
    path = Path(path)
    m = _NAME_RE.match(path.name)
    if not m:
        raise TrajectoryFormatError(f"{path.name}: file name is not <algorithm>__seed<k>.csv")
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise TrajectoryFormatError(f"{path.name}: unreadable ({exc})") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise TrajectoryFormatError(f"{path.name}: empty file")
    header = rows[0]
    dim = len(header) - 2 - len(TAIL_COLUMNS)
    if dim < 1 or header != columns(dim):
        unknown = [c for c in header if c not in columns(max(dim, 1)) and not re.fullmatch(r"x_\d+", c)]
        detail = f"unknown columns {unknown}" if unknown else f"header {header}"
        raise TrajectoryFormatError(f"{path.name}: schema mismatch: {detail}")
    seed = int(m.group("seed"))
    out = Trajectory(m.group("name"), seed, dim)
    prev_k = -1
    for lineno, row in enumerate(rows[1:], 2):
        where = f"{path.name}:{lineno}"
        if len(row) != len(header):
            raise TrajectoryFormatError(f"{where}: expected {len(header)} fields, got {len(row)}")
        rec = dict(zip(header, row))
        try:
            if int(rec["seed"]) != seed:
                raise TrajectoryFormatError(f"{where}: seed {rec['seed']} does not match file name")
            k = int(rec["k"])
        except ValueError:
            raise TrajectoryFormatError(f"{where}: seed and k must be integers") from None
        if k != prev_k + 1:
            raise TrajectoryFormatError(f"{where}: iteration {k} out of sequence")
        prev_k = k
        if rec["feasible"] not in ("0", "1"):
            raise TrajectoryFormatError(f"{where}: feasible must be 0 or 1")
        xs = [_num(f"x_{i}", rec[f"x_{i}"], where) for i in range(1, dim + 1)]
        if any(v is None for v in xs) and not (k == 0 and all(v is None for v in xs)):
            raise TrajectoryFormatError(f"{where}: missing coordinates")
        out.rows.append(
            TrajectoryRow(
                k,
                None if xs[0] is None else np.array(xs),
                rec["feasible"] == "1",
                _num("f_obs", rec["f_obs"], where),
                _num("best_feasible", rec["best_feasible"], where),
                _num("acq_value", rec["acq_value"], where),
                _num("wall_ms", rec["wall_ms"], where),
            )
        )
    if not out.rows:
        raise TrajectoryFormatError(f"{path.name}: no data rows")
    return out


def versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"cbob": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir, *, config_hash: str, problem: str, algorithms, seeds, files, failed) -> Path:
    manifest = {
        "format": FORMAT,
        "config_hash": config_hash,
        "problem": problem,
        "algorithms": list(algorithms),
        "seeds": list(seeds),
        "files": sorted(files),
        "failed": list(failed),
        "versions": versions(),
    }
    path = Path(out_dir) / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(out_dir) -> dict | None:
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        return None
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TrajectoryFormatError(f"{MANIFEST}: unreadable ({exc})") from exc
    if not isinstance(data, dict) or data.get("format") != FORMAT:
        raise TrajectoryFormatError(f"{MANIFEST}: not a {FORMAT} manifest")
    return data


def collect(out_dir) -> tuple[dict[str, list[Trajectory]], list[str]]:
    """Load every trajectory in ``out_dir``.

    Returns trajectories grouped by algorithm and a list of problems: files
    that fail validation, files the manifest does not list, runs the
    manifest marks as failed and listed files that are missing.
    """
    out_dir = Path(out_dir)
    manifest = read_manifest(out_dir)
    problems = []
    listed = set(manifest["files"]) if manifest else None
    failed = set(manifest.get("failed", [])) if manifest else set()
    groups: dict[str, list[Trajectory]] = {}
    candidates = sorted(p for p in out_dir.glob("*.csv") if p.name != SUMMARY and not p.name.startswith("band_"))
    for p in candidates:
        if p.name in failed:
            problems.append(f"{p.name}: run failed (partial trajectory), excluded")
            continue
        if listed is not None and p.name not in listed:
            problems.append(f"{p.name}: not listed in {MANIFEST} (foreign file), excluded")
            continue
        try:
            t = read_trajectory(p)
        except TrajectoryFormatError as exc:
            problems.append(f"{exc}, excluded")
            continue
        groups.setdefault(t.name, []).append(t)
    if listed is not None:
        present = {p.name for p in candidates}
        problems.extend(f"{name}: listed in {MANIFEST} but missing" for name in sorted(listed - present))
    for name, ts in groups.items():
        ts.sort(key=lambda t: t.seed)
        lengths = {len(t.rows) for t in ts}
        if len(lengths) > 1:
            longest = max(lengths)
            for t in [t for t in ts if len(t.rows) != longest]:
                problems.append(f"{trajectory_filename(t.name, t.seed)}: {len(t.rows)} rows, expected {longest}, excluded")
            groups[name] = [t for t in ts if len(t.rows) == longest]
    return groups, problems


def summarize(groups: dict[str, list[Trajectory]]) -> dict[str, RunSummary]:
    return {name: metrics(ts) for name, ts in sorted(groups.items()) if ts}


def write_summary(out_dir, summaries: dict[str, RunSummary]) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm", "runs", "median_bov", "mean_rof"])
    for name, s in summaries.items():
        w.writerow([name, s.runs, repr(s.median_bov), repr(s.mean_rof)])
    (out_dir / SUMMARY).write_text(buf.getvalue())
    paths.append(out_dir / SUMMARY)
    for name, s in summaries.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "q25", "median", "q75"])
        for k, a, b, c in zip(s.iterations, s.band_q25, s.band_median, s.band_q75):
            w.writerow([int(k), repr(float(a)), repr(float(b)), repr(float(c))])
        path = out_dir / f"band_{name}.csv"
        path.write_text(buf.getvalue())
        paths.append(path)
    return paths


def format_table(summaries: dict[str, RunSummary]) -> str:
    lines = [f"{'algorithm':<20} {'runs':>5} {'median BOV':>14} {'mean ROF':>9}"]
    for name, s in summaries.items():
        rof = "n/a" if math.isnan(s.mean_rof) else f"{100 * s.mean_rof:.1f}%"
        lines.append(f"{name:<20} {s.runs:>5} {s.median_bov:>14.6g} {rof:>9}")
    return "\n".join(lines)
