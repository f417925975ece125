"""Validity verdicts, accuracy thresholds, log files and result tables.

Log files are JSON Lines. The first line is a header carrying the format
name, version and record kind; field order is fixed so that a virtual-clock
run always serializes to the same bytes. Host-clock facts live under the
``wall`` key and nowhere else.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .runlog import RunLog
from .scenario import BenchmarkProfile, Scenario, TestMode, TestSettings
from .stats import fraction_within, percentile

FORMAT_NAME = "loadbench"
FORMAT_VERSION = 0
MULTISTREAM_SKIP_MAX = 0.01

METRICS = {
    Scenario.SINGLE_STREAM: ("p90_latency", "s"),
    Scenario.MULTI_STREAM: ("max_streams", "streams"),
    Scenario.SERVER: ("qps", "queries/s"),
    Scenario.OFFLINE: ("samples_per_second", "samples/s"),
}


class LogFormatError(ValueError):
    pass


@dataclass
class RunResult:
    scenario: Scenario
    task_name: str
    metric_name: str
    metric_value: float
    metric_units: str
    valid: bool
    violations: list[tuple[str, float, float]]
    query_count: int
    sample_count: int
    duration: float
    overtime_fraction: float | None = None
    skipped_fraction: float | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario.value,
            "task_name": self.task_name,
            "metric_name": self.metric_name,
            "metric_value": self.metric_value,
            "metric_units": self.metric_units,
            "valid": self.valid,
            "violations": [list(v) for v in self.violations],
            "query_count": self.query_count,
            "sample_count": self.sample_count,
            "duration": self.duration,
            "overtime_fraction": self.overtime_fraction,
            "skipped_fraction": self.skipped_fraction,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunResult":
        d = dict(d)
        d["scenario"] = Scenario(d["scenario"])
        d["violations"] = [tuple(v) for v in d["violations"]]
        return cls(**d)


@dataclass(frozen=True)
class AccuracyResult:
    measured: float
    reference: float
    target_fraction: float
    threshold: float
    passed: bool


def _dec(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def check_accuracy(measured: float, profile: BenchmarkProfile) -> AccuracyResult:
    """Pass iff measured >= target_fraction * reference, compared exactly."""
    exact = _dec(profile.accuracy_target_fraction) * _dec(profile.accuracy_reference)
    return AccuracyResult(
        measured=measured,
        reference=profile.accuracy_reference,
        target_fraction=profile.accuracy_target_fraction,
        threshold=float(exact),
        passed=_dec(measured) >= exact,
    )


def digest_accuracy(log: RunLog, reference: Callable[[np.ndarray], np.ndarray] | Mapping[int, int]) -> float:
    """Fraction of logged sample digests that equal the reference digests."""
    per_sample = log.sample_digests()
    if not per_sample:
        raise ValueError("log holds no payload digests")
    idx = np.fromiter(per_sample, dtype=np.int64)
    if isinstance(reference, Mapping):
        ref = [reference[int(i)] for i in idx]
    else:
        ref = reference(idx)
    got = [per_sample[int(i)][0] for i in idx]
    return float(np.mean(np.asarray(got, dtype=np.uint64) == np.asarray(ref, dtype=np.uint64)))


def check_validity(
    log: RunLog,
    profile: BenchmarkProfile | None = None,
    settings: TestSettings | None = None,
) -> RunResult:
    """Apply the scenario rules to a finished log and compute its metric.

    A pure function of its inputs: re-running it on a stored log gives the
    same verdict.
    """
    settings = settings or log.settings
    prof = profile or settings.bench_profile
    sc = settings.scenario
    n = log.query_count
    arrays = (log.scheduled_ns, log.completion_ns, log.sample_counts, log.skips)
    if n == 0 or any(a.size != n for a in arrays):
        raise LogFormatError("truncated log: per-query arrays are empty or ragged")

    violations: list[tuple[str, float, float]] = []
    done = log.completed_count
    if log.aborted:
        violations.append((f"aborted ({log.aborted})", done, n))
    elif done < n:
        violations.append(("all_queries_completed", done, n))

    lat = log.latencies_ns
    duration = log.duration_ns / 1e9
    samples = log.sample_count
    overtime = skipped = None

    if settings.mode is TestMode.PERFORMANCE:
        if n < settings.min_query_count:
            violations.append(("min_query_count", n, settings.min_query_count))
        if duration < settings.min_duration:
            violations.append(("min_duration", duration, settings.min_duration))
        if sc is Scenario.SERVER:
            bound = round(prof.server_qos_bound * 1e9)
            over = int(np.count_nonzero(lat > bound)) + (n - done)
            overtime = over / n
            if not fraction_within(over, n, prof.server_overtime_max):
                violations.append(("server_overtime_fraction", overtime, prof.server_overtime_max))
        elif sc is Scenario.MULTI_STREAM:
            skipped = log.queries_with_skips / n
            if not fraction_within(log.queries_with_skips, n, MULTISTREAM_SKIP_MAX):
                violations.append(("multistream_skipped_fraction", skipped, MULTISTREAM_SKIP_MAX))
        elif sc is Scenario.OFFLINE:
            if samples < prof.offline_min_samples:
                violations.append(("offline_min_samples", samples, prof.offline_min_samples))
    else:
        seen = np.sort(np.concatenate([np.asarray(v[0], dtype=np.int64) for v in log.logged.values()])) if log.logged else np.zeros(0, np.int64)
        if seen.size != samples or not np.array_equal(seen, np.arange(samples)):
            violations.append(("accuracy_coverage", int(np.unique(seen).size), samples))

    details: dict[str, Any] = {"mode": settings.mode.value}
    if lat.size:
        details["p90_latency"] = percentile(lat, 0.90) / 1e9
        details["tail_latency"] = percentile(lat, prof.tail_percentile) / 1e9
        details["tail_percentile"] = prof.tail_percentile
        details["mean_latency"] = float(lat.mean()) / 1e9
    if duration > 0:
        details["achieved_qps"] = n / duration
        details["samples_per_second"] = samples / duration
    if sc is Scenario.MULTI_STREAM:
        details["skipped_intervals"] = log.skipped_intervals

    name, units = METRICS[sc]
    if sc is Scenario.SINGLE_STREAM:
        value = details.get("p90_latency", float("nan"))
    elif sc is Scenario.MULTI_STREAM:
        value = float(settings.samples_per_query)
    elif sc is Scenario.SERVER:
        value = float(settings.target_qps)
    else:
        value = samples / duration if duration > 0 else 0.0

    return RunResult(
        scenario=sc,
        task_name=prof.task_name,
        metric_name=name,
        metric_value=value,
        metric_units=units,
        valid=not violations,
        violations=violations,
        query_count=n,
        sample_count=samples,
        duration=duration,
        overtime_fraction=overtime,
        skipped_fraction=skipped,
        details=details,
    )


# -- log files ---------------------------------------------------------------


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=True)


def _header(kind: str, **extra) -> dict[str, Any]:
    return {"format": FORMAT_NAME, "version": FORMAT_VERSION, "kind": kind, **extra}


def _runlog_lines(lg: RunLog) -> Iterable[str]:
    yield _dumps(
        _header(
            "run_log",
            settings=lg.settings.to_dict(),
            query_count=lg.query_count,
            end_ns=lg.end_ns,
            aborted=lg.aborted,
            wall=lg.wall,
        )
    )
    sched = lg.scheduled_ns.tolist()
    issue = lg.issue_ns.tolist()
    comp = lg.completion_ns.tolist()
    counts = lg.sample_counts.tolist()
    skips = lg.skips.tolist()
    for i in range(lg.query_count):
        rec: dict[str, Any] = {
            "query_id": i,
            "scheduled_ns": sched[i],
            "issue_ns": issue[i],
            "completion_ns": comp[i],
            "latency_ns": comp[i] - issue[i] if comp[i] >= 0 else None,
            "samples": counts[i],
            "skips": skips[i],
        }
        if i in lg.logged:
            idx, dig = lg.logged[i]
            rec["sample_indices"] = list(idx)
            rec["digests"] = list(dig)
        yield _dumps(rec)


def dumps_log(obj) -> str:
    """Serialize a RunLog, RunResult or AuditReport to the log text format."""
    if isinstance(obj, RunLog):
        lines = _runlog_lines(obj)
    elif isinstance(obj, RunResult):
        lines = [_dumps(_header("run_result")), _dumps(obj.to_dict())]
    elif hasattr(obj, "to_dict") and type(obj).__name__ == "AuditReport":
        lines = [_dumps(_header("audit_report")), _dumps(obj.to_dict())]
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    buf = io.StringIO()
    for line in lines:
        buf.write(line)
        buf.write("\n")
    return buf.getvalue()


def write_log(obj, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_log(obj))
    return path


def _parse(lineno: int, line: str) -> dict[str, Any]:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"line {lineno}: malformed record ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise LogFormatError(f"line {lineno}: record is not an object")
    return rec


def loads_log(text: str):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise LogFormatError("line 1: empty file")
    head = _parse(1, lines[0])
    if head.get("format") != FORMAT_NAME:
        raise LogFormatError("line 1: not a loadbench log")
    if head.get("version") != FORMAT_VERSION:
        raise LogFormatError(f"line 1: unknown version {head.get('version')!r}")
    kind = head.get("kind")
    if kind == "run_log":
        return _read_runlog(head, lines)
    if kind in ("run_result", "audit_report"):
        if len(lines) != 2:
            raise LogFormatError(f"line {len(lines) + 1}: expected exactly one body record")
        body = _parse(2, lines[1])
        try:
            if kind == "run_result":
                return RunResult.from_dict(body)
            from .audit import AuditReport

            return AuditReport.from_dict(body)
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(f"line 2: bad {kind} record ({exc})") from None
    raise LogFormatError(f"line 1: unknown kind {kind!r}")


_RECORD_KEYS = ("query_id", "scheduled_ns", "issue_ns", "completion_ns", "latency_ns", "samples", "skips")


def _read_runlog(head: dict[str, Any], lines: list[str]) -> RunLog:
    try:
        settings = TestSettings.from_dict(head["settings"])
        n = int(head["query_count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise LogFormatError(f"line 1: bad header ({exc})") from None
    if len(lines) - 1 != n:
        raise LogFormatError(
            f"line {len(lines) + 1}: expected {n} query records, found {len(lines) - 1}"
        )
    cols = {k: np.empty(n, dtype=np.int64) for k in ("scheduled_ns", "issue_ns", "completion_ns", "samples", "skips")}
    logged = {}
    for i in range(n):
        lineno = i + 2
        rec = _parse(lineno, lines[i + 1])
        if any(k not in rec for k in _RECORD_KEYS):
            raise LogFormatError(f"line {lineno}: missing fields")
        if rec["query_id"] != i:
            raise LogFormatError(f"line {lineno}: expected query_id {i}, got {rec['query_id']}")
        for k in cols:
            cols[k][i] = rec[k]
        if "digests" in rec:
            logged[i] = (tuple(rec["sample_indices"]), tuple(rec["digests"]))
    return RunLog(
        settings=settings,
        scheduled_ns=cols["scheduled_ns"],
        issue_ns=cols["issue_ns"],
        completion_ns=cols["completion_ns"],
        sample_counts=cols["samples"],
        skips=cols["skips"],
        end_ns=int(head["end_ns"]),
        logged=logged,
        aborted=head.get("aborted"),
        wall=head.get("wall", {}),
    )


def read_log(path: str | Path):
    return loads_log(Path(path).read_text())


def canonical_log_bytes(path: str | Path) -> bytes:
    """File bytes with the header's ``wall`` entry removed."""
    lines = Path(path).read_text().split("\n")
    head = json.loads(lines[0])
    head.pop("wall", None)
    lines[0] = _dumps(head)
    return "\n".join(lines).encode()


# -- summaries ---------------------------------------------------------------

_COLUMNS = ("task", "scenario", "metric", "value", "units", "status", "violations")


def _rows(results: Sequence[RunResult]) -> list[dict[str, Any]]:
    order = {s: k for k, s in enumerate(Scenario)}
    rows = []
    for r in sorted(results, key=lambda r: (r.task_name, order[r.scenario])):
        rows.append(
            {
                "task": r.task_name,
                "scenario": r.scenario.value,
                "metric": r.metric_name,
                "value": r.metric_value,
                "units": r.metric_units,
                "status": "VALID" if r.valid else "INVALID",
                "violations": [f"{rule}: {m:.6g} vs limit {lim:.6g}" for rule, m, lim in r.violations],
            }
        )
    return rows


def summarize(results: Sequence[RunResult], fmt: str = "text") -> str:
    """One row per task and scenario. Results are never combined across tasks."""
    rows = _rows(results)
    if fmt == "json":
        return json.dumps({"columns": list(_COLUMNS), "rows": rows}, indent=2)
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    table = [list(_COLUMNS)]
    for row in rows:
        table.append(
            [
                row["task"],
                row["scenario"],
                row["metric"],
                f"{row['value']:.6g}",
                row["units"],
                row["status"],
                "; ".join(row["violations"]) or "-",
            ]
        )
    widths = [max(len(r[c]) for r in table) for c in range(len(_COLUMNS))]
    out = []
    for k, r in enumerate(table):
        out.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
        if k == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"
