"""Command line interface: ``brokervmp {validate,solve,simulate,experiment}``.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .market import MarketError, apply_event, apply_request_event, market_from_dict, validate_request
from .moea import InfeasibleError, SolverParams, solve
from .placement import PlacementError
from .report import CSV_TABLES, format_table, render_report
from .scenario import (
    ScenarioError,
    build_report,
    load_scenario,
    run_experiment,
    run_timeline,
    validate_scenario,
)
from .selection import SelectionStrategy, select

log = logging.getLogger("brokervmp")

SEED_ENV = "BROKERVMP_SEED"
EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _strategy(name: str) -> SelectionStrategy:
    try:
        return SelectionStrategy.parse(name)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _strategies(spec: str) -> list[SelectionStrategy]:
    try:
        return SelectionStrategy.parse_list(spec)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    default_seed = int(os.environ.get(SEED_ENV, "0"))
    parser = _Parser(prog="brokervmp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a scenario or market file")
    p.add_argument("path", type=Path)

    def solver_opts(p):
        p.add_argument("scenario", type=Path)
        p.add_argument("--seed", type=int, default=default_seed,
                       help=f"master seed (default ${SEED_ENV} or 0)")
        p.add_argument("--population", type=int, default=50)
        p.add_argument("--generations", type=int, default=200)
        p.add_argument("--output-dir", type=Path)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--raw-distance", action="store_true",
                       help="un-normalized axes for the distance strategy")

    p = sub.add_parser("solve", help="solve the first instant and print the archive")
    solver_opts(p)
    p.add_argument("--strategy", type=_strategy, default=SelectionStrategy.S3_Preferred)

    p = sub.add_parser("simulate", help="replay one timeline with one strategy")
    solver_opts(p)
    p.add_argument("--strategy", type=_strategy, default=SelectionStrategy.S3_Preferred)
    p.add_argument("--force-resolve", action="store_true", help="re-solve at every instant")

    p = sub.add_parser("experiment", help="runs x strategies timelines with comparison tables")
    solver_opts(p)
    p.add_argument("--strategies", type=_strategies, default=list(SelectionStrategy),
                   help="comma separated names or 'all'")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--workers", type=int, default=None, help="process pool size (default: all CPUs)")
    p.add_argument("--force-resolve", action="store_true", help="re-solve at every instant")
    return parser


def _params(args) -> SolverParams:
    try:
        return SolverParams(population_size=args.population, generations=args.generations, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(args, files: dict[str, bytes]) -> None:
    if args.output_dir is None:
        for data in files.values():
            sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    args.output_dir.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        (args.output_dir / name).write_bytes(data)
        log.info("wrote %s", args.output_dir / name)


def _load_valid(path: Path):
    scenario = load_scenario(path)
    problems = validate_scenario(scenario)
    if problems:
        raise MarketError(f"{path}: invalid scenario", problems)
    return scenario


def cmd_validate(args) -> int:
    data = json.loads(args.path.read_text())
    if isinstance(data, dict) and "instants" not in data and "providers" in data:
        state = market_from_dict(data)
        print(f"{args.path}: valid market, {state.m} providers, {state.l} instance types")
        return EXIT_OK
    scenario = _load_valid(args.path)
    print(f"{args.path}: valid scenario, {scenario.instants} instants, {len(scenario.events)} events")
    return EXIT_OK


def cmd_solve(args) -> int:
    scenario = _load_valid(args.scenario)
    state, request = scenario.market, scenario.initial_request
    for e in scenario.events_at(1):
        state = apply_event(state, e)
        request = apply_request_event(request, e)
    problems = validate_request(request, state.m)
    if problems:
        raise MarketError("invalid request at t=1", problems)
    archive = solve(None, state, request, _params(args))
    chosen, vector = select(archive, args.strategy, args.seed, raw_distance=args.raw_distance)
    if args.format == "json":
        doc = {
            "bounds_met": archive.bounds_met,
            "strategy": args.strategy.value,
            "selected": {"placement": chosen.to_json(state), "objectives": vector.__dict__},
            "archive": [
                {"placement": p.to_json(state), "objectives": v.__dict__} for p, v in archive.entries
            ],
        }
        _emit(args, {"archive.json": (json.dumps(doc, indent=2) + "\n").encode()})
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("index", "f1", "f2", "f3", "ro_cpu", "ro_mem", "selected"))
        sel = archive.placement
        for i in range(len(archive)):
            o = archive.objectives[i]
            w.writerow((i, *(repr(float(x)) for x in (o[0], o[1], o[2], o[5], o[6])),
                        int(sel(i) == chosen)))
        _emit(args, {"archive.csv": buf.getvalue().encode()})
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = _load_valid(args.scenario)
    tl = run_timeline(scenario, _params(args), args.strategy, args.seed,
                      force_resolve=args.force_resolve, raw_distance=args.raw_distance)
    report = build_report(scenario, [args.strategy], 1, args.seed, {(args.strategy, 1): tl})
    if args.format == "json":
        doc = json.loads(render_report(report, "json"))
        doc["placements"] = [[list(p) for p in r.placement.pairs] for r in tl.per_instant]
        _emit(args, {"timeline.json": (json.dumps(doc, indent=2) + "\n").encode()})
    else:
        _emit(args, {"trace.csv": render_report(report, "csv", "trace")})
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    scenario = _load_valid(args.scenario)
    report = run_experiment(
        scenario, _params(args), args.strategies, args.runs, args.seed,
        workers=args.workers, force_resolve=args.force_resolve, raw_distance=args.raw_distance,
    )
    if args.format == "json":
        files = {"report.json": render_report(report, "json")}
    else:
        files = {f"{t}.csv": render_report(report, "csv", t) for t in CSV_TABLES}
    if args.output_dir is None:
        files = {"summary.csv": files["summary.csv"]} if args.format == "csv" else files
    _emit(args, files)
    print(format_table(report), file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"brokervmp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"brokervmp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MarketError, json.JSONDecodeError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"brokervmp: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, InfeasibleError, PlacementError, OSError, RuntimeError, ValueError) as exc:
        print(f"brokervmp: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
