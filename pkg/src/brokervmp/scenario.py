"""Replay of dynamic market timelines and multi-run strategy experiments."""
from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .market import (
    MarketError,
    MarketEvent,
    MarketState,
    TenantRequest,
    Violation,
    advance,
    apply_event,
    apply_request_event,
    market_from_dict,
    read_market,
    validate_market,
    validate_request,
)
from .moea import SolverParams, solve
from .placement import (
    ObjectiveVector,
    Placement,
    dominates,
    evaluate_objectives,
    preference,
    Preference,
    reconfigured_count,
)
from .selection import SelectionStrategy, select


class ScenarioError(RuntimeError):
    """A timeline could not be replayed; the message names the failing instant."""


@dataclass(frozen=True)
class Scenario:
    market: MarketState
    instants: int
    initial_request: TenantRequest
    events: tuple[MarketEvent, ...] = ()
    hours_per_instant: float = 24.0

    def events_at(self, t: int) -> list[MarketEvent]:
        return [e for e in self.events if e.at_instant == t]


def scenario_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> Scenario:
    if not isinstance(data, Mapping):
        raise MarketError("scenario document must be a JSON object")
    raw_market = data.get("market")
    if isinstance(raw_market, str):
        market = read_market(Path(base_dir) / raw_market)
    elif isinstance(raw_market, Mapping):
        market = market_from_dict(raw_market)
    else:
        raise MarketError("scenario needs a 'market' path or inline object")
    try:
        instants = int(data["instants"])
        hours = float(data.get("hours_per_instant", 24.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise MarketError(f"scenario needs an integer 'instants' ({exc})") from exc
    request = TenantRequest.from_dict(data.get("initial_request") or {}, default_horizon=hours)
    events = [MarketEvent.from_dict(e) for e in data.get("events") or []]
    # stable sort: ties keep file order
    events.sort(key=lambda e: e.at_instant)
    return Scenario(market, instants, request, tuple(events), hours)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MarketError(f"cannot parse {path}: {exc}") from exc
    return scenario_from_dict(data, path.parent)


def validate_scenario(scenario: Scenario) -> list[Violation]:
    """Dry-run every event; collect market, request and timing violations."""
    out = list(validate_market(scenario.market))
    if scenario.instants < 1:
        out.append(Violation("instants", "must be >= 1"))
    if not scenario.hours_per_instant > 0:
        out.append(Violation("hours_per_instant", "must be > 0"))
    for e in scenario.events:
        if not 1 <= e.at_instant <= scenario.instants:
            out.append(Violation("events", f"{e.kind} at t={e.at_instant} outside [1, {scenario.instants}]"))
    out += [
        Violation(v.invariant, f"t=1: {v.message}")
        for v in validate_request(scenario.initial_request, scenario.market.m)
    ]
    if out:
        return out
    state, request = scenario.market, scenario.initial_request
    for t in range(1, scenario.instants + 1):
        state = advance(state, t)
        for e in scenario.events_at(t):
            try:
                state = apply_event(state, e)
                request = apply_request_event(request, e)
            except (MarketError, KeyError, TypeError, ValueError) as exc:
                return [Violation("events", f"t={t} {e.kind}: {exc}")]
        out += [Violation(v.invariant, f"t={t}: {v.message}") for v in validate_request(request, state.m)]
    return out


# -- timelines --------------------------------------------------------------------


@dataclass(frozen=True)
class InstantResult:
    t: int
    placement: Placement
    objectives: ObjectiveVector
    archive_size: int
    bounds_met: bool
    reconfigured: int
    resolved: bool = True

    @property
    def n(self) -> int:
        return len(self.placement)


@dataclass(frozen=True)
class TimelineResult:
    per_instant: tuple[InstantResult, ...]
    strategy: SelectionStrategy
    seed: int

    def mean_objectives(self) -> tuple[float, float, float]:
        k = len(self.per_instant)
        return tuple(
            math.fsum(r.objectives.as_tuple()[i] for r in self.per_instant) / k for i in range(3)
        )


def _instant_rng(seed: int, t: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t, purpose)))


def run_timeline(
    scenario: Scenario,
    params: SolverParams,
    strategy: SelectionStrategy,
    seed: int,
    *,
    force_resolve: bool = False,
    raw_distance: bool = False,
) -> TimelineResult:
    """Replay ``scenario`` deploying one selected placement per instant.

    The solver only runs at t=1 and at instants where some event fired, unless
    ``force_resolve`` is set; otherwise the deployed placement is kept.
    """
    state, request = scenario.market, scenario.initial_request
    prev: Placement | None = None
    last: InstantResult | None = None
    out: list[InstantResult] = []
    for t in range(1, scenario.instants + 1):
        fired = scenario.events_at(t)
        try:
            state = advance(state, t)
            for e in fired:
                state = apply_event(state, e)
                request = apply_request_event(request, e)
            problems = validate_request(request, state.m)
            if problems:
                raise ScenarioError("; ".join(map(str, problems)))
            if prev is None or fired or force_resolve:
                archive = solve(prev, state, request, params, _instant_rng(seed, t, 0))
                chosen, vector = select(archive, strategy, _instant_rng(seed, t, 1), raw_distance=raw_distance)
                last = InstantResult(
                    t, chosen, vector, len(archive), archive.bounds_met, reconfigured_count(prev, chosen)
                )
            else:
                vector = evaluate_objectives(prev, prev, state, request)
                last = InstantResult(t, prev, vector, last.archive_size, last.bounds_met, 0, resolved=False)
        except ScenarioError as exc:
            raise ScenarioError(f"t={t}: {exc}") from exc
        except (MarketError, ValueError) as exc:
            raise ScenarioError(f"t={t}: {exc}") from exc
        out.append(last)
        prev = last.placement
    return TimelineResult(tuple(out), strategy, seed)


# -- experiments ------------------------------------------------------------------


TRACE_COLUMNS = (
    "run", "strategy", "t", "n", "f1", "f2", "f3",
    "ro_cpu", "ro_mem", "archive_size", "reconfigured", "bounds_met",
)


@dataclass(frozen=True)
class TraceRow:
    run: int
    strategy: str
    t: int
    n: int
    f1: float
    f2: float
    f3: float
    ro_cpu: float
    ro_mem: float
    archive_size: int
    reconfigured: int
    bounds_met: bool


@dataclass(frozen=True)
class ExperimentReport:
    strategies: tuple[str, ...]
    runs: int
    instants: int
    seed: int
    averages: tuple[tuple[float, float, float], ...]
    samples: tuple[int, ...]
    run_averages: tuple[tuple[tuple[float, float, float], ...], ...] = ()
    trace: tuple[TraceRow, ...] = field(default=(), repr=False)

    @property
    def strategy_enums(self) -> list[SelectionStrategy]:
        return [SelectionStrategy(s) for s in self.strategies]

    def average_of(self, strategy: SelectionStrategy | str) -> tuple[float, float, float]:
        name = strategy.value if isinstance(strategy, SelectionStrategy) else strategy
        return self.averages[self.strategies.index(name)]

    def to_dict(self) -> dict[str, Any]:
        dom, pref = compare_strategies(self)
        return {
            "strategies": list(self.strategies),
            "runs": self.runs,
            "instants": self.instants,
            "seed": self.seed,
            "averages": [list(a) for a in self.averages],
            "samples": list(self.samples),
            "run_averages": [[list(a) for a in per_run] for per_run in self.run_averages],
            "dominance": [list(row) for row in dom],
            "preference": [list(row) for row in pref],
            "trace": [[getattr(r, c) for c in TRACE_COLUMNS] for r in self.trace],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentReport:
        return cls(
            strategies=tuple(data["strategies"]),
            runs=int(data["runs"]),
            instants=int(data["instants"]),
            seed=int(data["seed"]),
            averages=tuple(tuple(a) for a in data["averages"]),
            samples=tuple(data["samples"]),
            run_averages=tuple(tuple(tuple(a) for a in per_run) for per_run in data.get("run_averages", [])),
            trace=tuple(TraceRow(*row) for row in data.get("trace", [])),
        )


def timeline_seed(master_seed: int, run: int, strategy: SelectionStrategy) -> int:
    """Order-independent 64-bit seed for one (run, strategy) timeline."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(run, strategy.number))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_task(task) -> TimelineResult:
    scenario, params, strategy, run, master_seed, force_resolve, raw_distance = task
    try:
        return run_timeline(
            scenario, params, strategy, timeline_seed(master_seed, run, strategy),
            force_resolve=force_resolve, raw_distance=raw_distance,
        )
    except ScenarioError as exc:
        raise ScenarioError(f"strategy {strategy.value}, run {run}: {exc}") from exc


def run_experiment(
    scenario: Scenario,
    params: SolverParams,
    strategies: Sequence[SelectionStrategy],
    runs: int,
    seed: int = 0,
    *,
    workers: int | None = 1,
    force_resolve: bool = False,
    raw_distance: bool = False,
) -> ExperimentReport:
    """Run ``runs`` timelines per strategy and average f1/f2/f3 per strategy.

    ``workers=None`` uses every available processor.  Results are folded in
    (strategy, run) order, so the report does not depend on scheduling.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    strategies = list(dict.fromkeys(strategies))
    if not strategies:
        raise ValueError("no strategies given")
    tasks = [
        (scenario, params, s, run, seed, force_resolve, raw_distance)
        for s in strategies
        for run in range(1, runs + 1)
    ]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(task) for task in tasks]
    by_key = {(task[2], task[3]): res for task, res in zip(tasks, results)}
    return build_report(scenario, strategies, runs, seed, by_key)


def build_report(
    scenario: Scenario,
    strategies: Sequence[SelectionStrategy],
    runs: int,
    seed: int,
    timelines: Mapping[tuple[SelectionStrategy, int], TimelineResult],
) -> ExperimentReport:
    trace: list[TraceRow] = []
    averages, samples, run_averages = [], [], []
    for s in strategies:
        values: dict[int, list[float]] = defaultdict(list)
        per_run = []
        for run in range(1, runs + 1):
            tl = timelines[(s, run)]
            per_run.append(tl.mean_objectives())
            for r in tl.per_instant:
                v = r.objectives
                for i, x in enumerate(v.as_tuple()):
                    values[i].append(x)
                trace.append(
                    TraceRow(run, s.value, r.t, r.n, v.f1_ticpu, v.f2_timem, v.f3_tip, v.ro_cpu,
                             v.ro_mem, r.archive_size, r.reconfigured, r.bounds_met)
                )
        count = len(values[0])
        averages.append(tuple(math.fsum(values[i]) / count for i in range(3)))
        samples.append(count)
        run_averages.append(tuple(per_run))
    return ExperimentReport(
        strategies=tuple(s.value for s in strategies),
        runs=runs,
        instants=scenario.instants,
        seed=seed,
        averages=tuple(averages),
        samples=tuple(samples),
        run_averages=tuple(run_averages),
        trace=tuple(trace),
    )


Matrix = tuple[tuple[bool | None, ...], ...]


def _matrices(vectors: Sequence[tuple[float, float, float]]) -> tuple[Matrix, Matrix]:
    k = len(vectors)
    dom = tuple(
        tuple(None if a == b else dominates(vectors[a], vectors[b]) for b in range(k)) for a in range(k)
    )
    pref = tuple(
        tuple(None if a == b else preference(vectors[a], vectors[b]) is Preference.A for b in range(k))
        for a in range(k)
    )
    return dom, pref


def compare_strategies(report: ExperimentReport) -> tuple[Matrix, Matrix]:
    """Pairwise dominance and preference of the strategies' averaged vectors.

    Cell ``[a][b]`` is True when strategy ``a`` dominates (is preferred over)
    strategy ``b``; the diagonal is ``None``.
    """
    return _matrices(report.averages)


def compare_runs(report: ExperimentReport) -> list[tuple[Matrix, Matrix]]:
    """Per-run comparison matrices, for looking at run-to-run spread."""
    return [
        _matrices([report.run_averages[s][run] for s in range(len(report.strategies))])
        for run in range(report.runs)
    ]
