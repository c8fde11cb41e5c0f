"""Table rendering for experiment reports (CSV and JSON)."""
from __future__ import annotations

import csv
import io
import json
from decimal import ROUND_HALF_EVEN, Decimal

from .scenario import TRACE_COLUMNS, ExperimentReport, compare_strategies

SUMMARY_COLUMNS = ("no", "strategy", "ticpu", "timem", "tip")
CSV_TABLES = ("summary", "trace", "dominance", "preference")


def fmt2(x: float) -> str:
    """Two decimals, half-even on the shortest decimal repr of ``x``."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def _cell(flag) -> str:
    if flag is None:
        return "N/A"
    return "succ" if flag else "-"


def _csv(rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue().encode()


def render_report(report: ExperimentReport, fmt: str = "csv", table: str = "summary") -> bytes:
    """Serialize ``report``.

    ``fmt="json"`` returns the whole report at full precision.  For CSV,
    ``table`` picks one of ``summary`` (averaged objectives), ``trace``
    (per-instant rows), ``dominance`` or ``preference`` (pairwise matrices
    with ``succ`` / ``-`` / ``N/A`` cells).
    """
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2) + "\n").encode()
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    strategies = report.strategy_enums
    if table == "summary":
        rows = [SUMMARY_COLUMNS]
        for s, avg in zip(strategies, report.averages):
            rows.append((s.label, s.title, *(fmt2(v) for v in avg)))
        return _csv(rows)
    if table == "trace":
        rows = [TRACE_COLUMNS]
        for r in report.trace:
            rows.append(
                (r.run, r.strategy, r.t, r.n, repr(r.f1), repr(r.f2), repr(r.f3), repr(r.ro_cpu),
                 repr(r.ro_mem), r.archive_size, r.reconfigured, int(r.bounds_met))
            )
        return _csv(rows)
    if table in ("dominance", "preference"):
        matrix = compare_strategies(report)[0 if table == "dominance" else 1]
        rows = [("no", "strategy", *(s.label for s in strategies))]
        for s, row in zip(strategies, matrix):
            rows.append((s.label, s.title, *(_cell(c) for c in row)))
        return _csv(rows)
    raise ValueError(f"unknown table {table!r}; expected one of {CSV_TABLES}")


def parse_report(data: bytes) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(data))


def format_table(report: ExperimentReport) -> str:
    """Human-readable summary for terminals."""
    lines = [f"{'No.':<4}{'Selection Strategy':<20}{'TICPU':>12}{'TIMEM':>12}{'TIP':>10}"]
    for s, avg in zip(report.strategy_enums, report.averages):
        lines.append(f"{s.label:<4}{s.title:<20}" + "".join(
            f"{fmt2(v):>{w}}" for v, w in zip(avg, (12, 12, 10))
        ))
    return "\n".join(lines)

