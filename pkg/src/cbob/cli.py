"""Command-line front end: ``cbob run | summarize | demo | list-problems``.

Exit status: 0 success, 1 usage or configuration error, 2 partial failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import ConfigError, load_toml, parse_experiment, parse_seeds
from .demos import FIGURES, build_figure, write_tables
from .driver import RunConfig, run
from .problems import builtin_problems
from .results import (
    MANIFEST,
    collect,
    format_table,
    summarize,
    trajectory_filename,
    write_manifest,
    write_summary,
    write_trajectory,
)

WORKERS_ENV = "CBOB_WORKERS"
EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2

logger = logging.getLogger("cbob")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cbob", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="execute every (algorithm x seed) run of an experiment config")
    r.add_argument("--config", required=True, help="experiment TOML file")
    r.add_argument("--out", help="output directory (overrides the config's 'out')")
    r.add_argument("--seeds", help="seed list such as 0-19 or 0,3,7")
    r.add_argument("--workers", type=int, help=f"parallel runs (default: ${WORKERS_ENV} or the config)")
    r.add_argument("--force", action="store_true", help="replace results already in the output directory")
    r.add_argument("--budget", type=int, help="acquisition-phase evaluations per run")
    r.add_argument("--beta", type=float, help="exploration beta for every CBOB algorithm")
    r.add_argument("--timing", action="store_true", help="record wall_ms (trajectories are then not byte-stable)")

    s = sub.add_parser("summarize", help="tabulate BOV/ROF and write quartile bands for a run directory")
    s.add_argument("out", nargs="?", help="run directory")
    s.add_argument("--out", dest="out_flag", help="run directory")

    d = sub.add_parser("demo", help="write the plot-ready data of an illustrative figure")
    d.add_argument("figure", help=f"one of {', '.join(FIGURES)}")
    d.add_argument("--out", default="demo", help="output directory (default: ./demo)")
    d.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-problems", help="show the built-in benchmark problems")
    return p


def _apply_overrides(data: dict, args) -> dict:
    data = dict(data)
    if args.budget is not None:
        data["budget"] = args.budget
    if args.seeds is not None:
        data["seeds"] = list(parse_seeds(args.seeds))
    if args.timing:
        data["timing"] = True
    if args.beta is not None:
        algos = []
        for a in data.get("algorithms", []):
            a = dict(a) if isinstance(a, dict) else a
            if isinstance(a, dict) and str(a.get("algorithm", "CBOB")).upper() == "CBOB":
                a["beta"] = args.beta
            algos.append(a)
        data["algorithms"] = algos
    return data


def _resolve_workers(flag: int | None, configured: int) -> int:
    if flag is not None:
        workers = flag
    elif os.environ.get(WORKERS_ENV):
        try:
            workers = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise ConfigError(f"${WORKERS_ENV} must be an integer, got {os.environ[WORKERS_ENV]!r}") from None
    else:
        workers = configured
    if workers < 1:
        raise ConfigError("worker count must be >= 1")
    return workers


def _execute(task: tuple[RunConfig, str]) -> tuple[str, str, str]:
    cfg, out_dir = task
    name = trajectory_filename(cfg.name, cfg.seed)
    try:
        traj = run(cfg)
    except Exception as exc:  # a crashed run must not take the batch down
        return name, "error", f"{type(exc).__name__}: {exc}"
    write_trajectory(traj, out_dir)
    return name, traj.status, traj.message


def _existing_results(out_dir: Path) -> list[Path]:
    return [p for p in out_dir.iterdir() if p.suffix == ".csv" or p.name == MANIFEST]


def cmd_run(args) -> int:
    config_path = Path(args.config)
    try:
        data = _apply_overrides(load_toml(config_path), args)
        exp = parse_experiment(data, str(config_path), config_path.read_text())
        workers = _resolve_workers(args.workers, exp.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or exp.out
    if not out:
        print("error: no output directory (use --out or set 'out' in the config)", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(out)
    if out_dir.exists():
        if not out_dir.is_dir():
            print(f"error: {out_dir} exists and is not a directory", file=sys.stderr)
            return EXIT_USAGE
        existing = _existing_results(out_dir)
        if existing and not args.force:
            print(f"error: {out_dir} already holds results; pass --force to replace them", file=sys.stderr)
            return EXIT_USAGE
        for p in existing:
            p.unlink()
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = [(cfg, str(out_dir)) for cfg in exp.tasks()]
    logger.info("%d runs on %s with %d worker(s)", len(tasks), exp.problem, workers)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute, tasks))
    else:
        results = [_execute(t) for t in tasks]

    files = [name for name, status, _ in results if (out_dir / name).exists()]
    failed = [name for name, status, _ in results if status != "ok"]
    write_manifest(
        out_dir,
        config_hash=exp.config_hash(),
        problem=exp.problem,
        algorithms=[r.name for r in exp.runs],
        seeds=exp.seeds,
        files=files,
        failed=failed,
    )
    print(f"wrote {len(files)} trajectory file(s) and {MANIFEST} to {out_dir}")
    if failed:
        print(f"{len(failed)} run(s) failed:", file=sys.stderr)
        for name, status, message in results:
            if status != "ok":
                print(f"  {name}: {message}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_summarize(args) -> int:
    out = args.out_flag or args.out
    if not out:
        print("error: give the run directory", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(out)
    if not out_dir.is_dir():
        print(f"error: {out_dir} is not a directory", file=sys.stderr)
        return EXIT_USAGE
    try:
        groups, problems = collect(out_dir)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    summaries = summarize(groups)
    if not summaries:
        print(f"error: no valid trajectory files in {out_dir}", file=sys.stderr)
        for msg in problems:
            print(f"  {msg}", file=sys.stderr)
        return EXIT_USAGE
    write_summary(out_dir, summaries)
    print(format_table(summaries))
    if problems:
        print("excluded:", file=sys.stderr)
        for msg in problems:
            print(f"  {msg}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_demo(args) -> int:
    if args.figure not in FIGURES:
        print(f"error: unknown figure {args.figure!r}; choose from {', '.join(FIGURES)}", file=sys.stderr)
        return EXIT_USAGE
    paths = write_tables(build_figure(args.figure, args.seed), args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_list_problems(args) -> int:
    for spec in builtin_problems():
        print(f"{spec.name:<22} n={spec.dim:<3} m={spec.n_constraints:<2} {spec.scenario:<5} {spec.description}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": cmd_run, "summarize": cmd_summarize, "demo": cmd_demo, "list-problems": cmd_list_problems}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
