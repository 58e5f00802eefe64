"""Command line front end.

Verbs:
  run       execute the full method x seed x scenario grid plus baselines
  validate  check a config file and print its identifying hash
  baseline  run only a reference baseline (joint or it) from a config
  report    summarize an existing results directory (tables + figures)

A failed grid cell is recorded in failures.json and the rest of the grid
still runs; the process then exits nonzero so callers notice.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (ExperimentConfig, Scenario, build_datasets, build_model,
                     build_settings, override, parse_config)
from .errors import ItlError, ValidationError
from .federation import run_cwt, run_individual, run_joint, run_swt
from .metrics import (AccuracyMatrix, RunRecord, emit_runs_csv,
                      emit_runs_json, emit_summary_csv)
from .report import (INDIVIDUAL, build_summaries, format_summary_table,
                     render_curves, write_report, write_summary_json)

OUT_ENV = "ITLSIM_OUT"

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAILED = 3

# One grid cell: (kind, scenario, method, seed). kind "run" visits the
# transfer schedule; "joint" and "it" are the reference baselines.
Task = tuple[str, Scenario, str, int]


def build_grid(config: ExperimentConfig) -> list[Task]:
    """Deterministic task order: scenario-major, then methods, then seeds."""
    seeds = [config.seed_base + i for i in range(config.repeats)]
    tasks: list[Task] = []
    for scenario in config.scenarios:
        for method in config.methods:
            for seed in seeds:
                tasks.append(("run", scenario, method, seed))
        if config.baseline_joint:
            for seed in seeds:
                tasks.append(("joint", scenario, "joint", seed))
        if config.baseline_individual:
            for seed in seeds:
                tasks.append(("it", scenario, INDIVIDUAL, seed))
    return tasks


def execute_task(config: ExperimentConfig,
                 task: Task) -> tuple[Task, RunRecord | None, str | None]:
    """Run one grid cell. Returns (task, record, failure message)."""
    kind, scenario, method, seed = task
    try:
        datasets = build_datasets(config, scenario)
        model = build_model(config)
        settings = build_settings(config, method if kind == "run" else "ft",
                                  seed)
        if kind == "joint":
            result = run_joint(model, datasets, settings,
                               epochs=config.baseline_epochs)
            if result.failed:
                return task, None, result.failure
            matrix = result.matrix
        elif kind == "it":
            results = run_individual(model, datasets, settings,
                                     epochs=config.baseline_epochs)
            broken = next((r for r in results if r.failed), None)
            if broken is not None:
                return task, None, broken.failure
            matrix = AccuracyMatrix(
                np.hstack([r.matrix.values for r in results]))
        else:
            if config.schedule_kind == "swt":
                result = run_swt(model, datasets, method, settings,
                                 epochs_per_center=config.epochs_per_center)
            else:
                result = run_cwt(model, datasets, method, settings,
                                 e_transfer=config.e_transfer,
                                 iterations=config.iterations)
            if result.failed:
                return task, None, result.failure
            matrix = result.matrix
        record = RunRecord(method=method, scenario=scenario.name, seed=seed,
                           matrix=matrix, config_hash=config.hash)
        return task, record, None
    except ItlError as exc:
        return task, None, str(exc)


def _run_grid(config: ExperimentConfig, out_dir: Path, fmt: str,
              jobs: int) -> int:
    tasks = build_grid(config)
    if not tasks:
        raise ValidationError(["config produces an empty grid "
                               "(no methods and no baselines enabled)"])
    worker = functools.partial(execute_task, config)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(worker, tasks))
    else:
        outcomes = [worker(t) for t in tasks]

    records = [rec for _, rec, _ in outcomes if rec is not None]
    failures = [{"kind": t[0], "scenario": t[1].name, "method": t[2],
                 "seed": t[3], "error": err, "config_hash": config.hash}
                for t, _, err in outcomes if err is not None]

    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if fmt == "json":
        written.append(emit_runs_json(records, out_dir / "runs.json"))
    else:
        written.append(emit_runs_csv(records, out_dir / "runs.csv"))
    if failures:
        fail_path = out_dir / "failures.json"
        fail_path.write_text(json.dumps(failures, indent=2))
        written.append(fail_path)
    if records:
        summaries = build_summaries(records)
        if fmt == "json":
            written.append(write_summary_json(summaries,
                                              out_dir / "summary.json"))
        else:
            written.append(emit_summary_csv(summaries,
                                            out_dir / "summary.csv"))
        written.extend(render_curves(records, out_dir))
        print(format_summary_table(summaries))
    for path in written:
        print(f"wrote {path}")
    for f in failures:
        print(f"FAILED {f['kind']}:{f['method']} scenario={f['scenario']} "
              f"seed={f['seed']}: {f['error']}", file=sys.stderr)
    return EXIT_FAILED if failures else EXIT_OK


def _resolve_out(arg_out: str | None) -> Path:
    return Path(arg_out or os.environ.get(OUT_ENV) or "results")


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seeds", type=int, default=None, metavar="N",
                        help="override the configured repeat count")
    parser.add_argument("--out", default=None, metavar="DIR",
                        help=f"output directory (default ${OUT_ENV} "
                             "or ./results)")
    parser.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="worker processes for the grid")
    parser.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="delimited output format")


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itlsim",
        description="Simulate incremental transfer learning across centers.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment grid")
    p_run.add_argument("config", help="JSON experiment config")
    _add_run_flags(p_run)

    p_val = sub.add_parser("validate",
                           help="check a config and print its hash")
    p_val.add_argument("config", help="JSON experiment config")

    p_base = sub.add_parser("baseline", help="run one reference baseline")
    p_base.add_argument("which", choices=("joint", "it"),
                        help="pooled training or isolated per-center models")
    p_base.add_argument("config", help="JSON experiment config")
    _add_run_flags(p_base)

    p_rep = sub.add_parser("report",
                           help="summarize an existing results directory")
    p_rep.add_argument("results_dir")
    p_rep.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.verb == "validate":
        config = parse_config(args.config)
        print(f"ok {config.hash}")
        return EXIT_OK
    if args.verb == "report":
        written = write_report(args.results_dir, fmt=args.format)
        for group in written.values():
            for path in group:
                print(f"wrote {path}")
        return EXIT_OK

    config = parse_config(args.config)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ValidationError(["--seeds must be at least 1"])
        config = override(config, repeats=args.seeds)
    if args.jobs < 1:
        raise ValidationError(["--jobs must be at least 1"])
    if args.verb == "baseline":
        config = override(config, methods=(),
                          baseline_joint=args.which == "joint",
                          baseline_individual=args.which == "it")
    return _run_grid(config, _resolve_out(args.out), args.format, args.jobs)


def main(argv: list[str] | None = None) -> int:
    args = _make_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ValidationError as exc:
        for violation in exc.violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return EXIT_INVALID
    except (ItlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
