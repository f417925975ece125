"""Compliance experiments runnable against any SUT.

Each audit runs paired experiments that differ in one variable only and
returns an :class:`AuditReport`. Nothing here touches the SUT's
configuration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .harness import run_accuracy, run_performance
from .reporting import RunResult, check_validity
from .runlog import RunLog
from .scenario import Scenario, TestMode, TestSettings, validate_settings
from .schedule import offline_sample_count
from .sut import SampleLibrary, SystemUnderTest

DEFAULT_CACHING_THRESHOLD = 0.10
DEFAULT_SEED_TOLERANCE = 0.05


class AuditError(ValueError):
    pass


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


@dataclass
class AuditReport:
    test_name: str
    verdict: Verdict
    evidence: dict[str, Any] = field(default_factory=dict)
    logs: list[str] = field(default_factory=list)
    runs: list[RunLog] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.verdict = Verdict(self.verdict)
        if self.verdict is Verdict.FAIL and not any(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in self.evidence.values()
        ):
            raise AuditError("a failing audit must carry quantitative evidence")

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS

    def to_dict(self) -> dict[str, Any]:
        return {
            "test_name": self.test_name,
            "verdict": self.verdict.value,
            "evidence": self.evidence,
            "logs": list(self.logs),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AuditReport":
        return cls(d["test_name"], Verdict(d["verdict"]), dict(d["evidence"]), list(d["logs"]))


def _label(settings: TestSettings, tag: str) -> str:
    return (
        f"{tag}:{settings.scenario.value}:schedule_seed={settings.schedule_seed}"
        f":sample_seed={settings.sample_seed}"
    )


# -- accuracy verification ---------------------------------------------------


def audit_accuracy_verification(
    sut: SystemUnderTest,
    lib: SampleLibrary,
    settings: TestSettings,
    sampling_rate: float,
    reference_log: RunLog | None = None,
) -> AuditReport:
    """Spot-check performance-mode answers against accuracy-mode answers.

    Without ``reference_log`` an accuracy-mode run is made first. Which
    responses get logged is drawn from the sample-seed side, independent of
    the schedule.
    """
    if not 0.0 <= sampling_rate <= 1.0:
        raise AuditError("sampling_rate must be in [0, 1]")
    if reference_log is None:
        acc = replace(
            settings,
            mode=TestMode.ACCURACY,
            min_query_count=None,
            accuracy_log_probability=0.0,
        )
        reference_log = run_accuracy(sut, lib, acc)
    if reference_log.settings.mode is not TestMode.ACCURACY:
        raise AuditError("reference log must come from an accuracy-mode run")
    reference = {i: ds[0] for i, ds in reference_log.sample_digests().items()}
    if not reference:
        raise AuditError("missing reference log: no accuracy digests recorded")

    perf = replace(settings, mode=TestMode.PERFORMANCE, accuracy_log_probability=sampling_rate)
    lg = run_performance(sut, lib, perf)
    checked = mismatched = unknown = 0
    for idx, digests in lg.sample_digests().items():
        for d in digests:
            checked += 1
            if idx not in reference:
                unknown += 1
            elif reference[idx] != d:
                mismatched += 1
    evidence = {
        "sampling_rate": sampling_rate,
        "queries_logged": len(lg.logged),
        "samples_checked": checked,
        "mismatches": mismatched,
        "samples_without_reference": unknown,
    }
    logs = [_label(reference_log.settings, "accuracy"), _label(perf, "performance")]
    if checked == 0:
        verdict = Verdict.INCONCLUSIVE
    elif mismatched:
        verdict = Verdict.FAIL
    else:
        verdict = Verdict.PASS
    return AuditReport("accuracy_verification", verdict, evidence, logs, [reference_log, lg])


# -- caching -----------------------------------------------------------------


def processing_rate(log: RunLog) -> float:
    """Samples processed per second of query latency.

    For closed-loop and offline runs this is plain throughput; for the
    timer-driven scenarios it is the reciprocal of the mean per-sample
    latency, which is what caching would inflate.
    """
    lat = log.latencies_ns
    counts = log.sample_counts[log.completion_ns >= 0]
    busy = lat.sum() / 1e9
    return float(counts.sum() / busy) if busy > 0 else float("inf")


def audit_caching(
    sut: SystemUnderTest,
    lib: SampleLibrary,
    settings: TestSettings,
    caching_threshold: float = DEFAULT_CACHING_THRESHOLD,
    duplicate_pool: int = 8,
) -> AuditReport:
    """Unique-index phase against duplicate-heavy phase.

    Both phases issue the same query count and shape; only the sample
    indices differ. Fails when the duplicate phase is more than
    ``caching_threshold`` faster.
    """
    s = validate_settings(replace(settings, mode=TestMode.PERFORMANCE, min_duration=0.0))
    sc = s.scenario
    if sc is Scenario.OFFLINE:
        rows, width = 1, offline_sample_count(s)
    else:
        rows = s.min_query_count
        width = s.samples_per_query if sc is Scenario.MULTI_STREAM else 1
    demand = rows * width
    if demand > lib.total_samples:
        raise AuditError(
            f"library too small for the unique phase: need {demand} samples, have {lib.total_samples}"
        )
    s = replace(s, performance_sample_count=max(s.performance_sample_count, demand))
    s = replace(s, performance_sample_count=min(s.performance_sample_count, lib.total_samples))
    unique = np.arange(demand, dtype=np.int64).reshape(rows, width)
    pool = max(1, min(duplicate_pool, demand))
    dup = (np.arange(demand, dtype=np.int64) % pool).reshape(rows, width)

    lg_u = run_performance(sut, lib, s, sample_plan=unique)
    lg_d = run_performance(sut, lib, s, sample_plan=dup)
    ru, rd = processing_rate(lg_u), processing_rate(lg_d)
    ratio = rd / ru
    evidence = {
        "unique_rate": ru,
        "duplicate_rate": rd,
        "ratio": ratio,
        "threshold": 1.0 + caching_threshold,
        "samples_per_phase": demand,
        "duplicate_pool": pool,
    }
    verdict = Verdict.FAIL if ratio > 1.0 + caching_threshold else Verdict.PASS
    return AuditReport(
        "caching", verdict, evidence, [_label(s, "unique"), _label(s, "duplicate")], [lg_u, lg_d]
    )


# -- alternate seeds ---------------------------------------------------------


def performance_score(result: RunResult) -> float:
    """Higher-is-better figure for comparing runs of one scenario."""
    if not result.valid:
        return 0.0
    if result.scenario is Scenario.SINGLE_STREAM:
        return 1.0 / result.metric_value if result.metric_value > 0 else float("inf")
    return result.metric_value


def audit_alternate_seed(
    sut: SystemUnderTest,
    lib: SampleLibrary,
    settings: TestSettings,
    alternate_seeds: Sequence[int | tuple[int, int]],
    seed_tolerance: float = DEFAULT_SEED_TOLERANCE,
) -> AuditReport:
    """Re-run with alternate seeds and compare to the official seed.

    An integer replaces the schedule seed; a ``(schedule, sample)`` pair
    replaces both.
    """
    if not alternate_seeds:
        raise AuditError("at least one alternate seed is required")
    official = replace(settings, mode=TestMode.PERFORMANCE)
    lg0 = run_performance(sut, lib, official)
    r0 = check_validity(lg0)
    base = performance_score(r0)
    runs = [lg0]
    logs = [_label(official, "official")]
    alt_scores, alt_valid, failures = [], [], []
    for k, seed in enumerate(alternate_seeds):
        if isinstance(seed, tuple):
            s = replace(official, schedule_seed=seed[0], sample_seed=seed[1])
        else:
            s = replace(official, schedule_seed=seed)
        lg = run_performance(sut, lib, s)
        r = check_validity(lg)
        score = performance_score(r)
        runs.append(lg)
        logs.append(_label(s, f"alternate{k}"))
        alt_scores.append(score)
        alt_valid.append(r.valid)
        if not r.valid or score < (1.0 - seed_tolerance) * base:
            failures.append(k)
    evidence = {
        "official_score": base,
        "official_valid": r0.valid,
        "alternate_scores": alt_scores,
        "alternate_valid": alt_valid,
        "worst_ratio": (min(alt_scores) / base) if base > 0 else 0.0,
        "tolerance": seed_tolerance,
        "failed_alternates": len(failures),
    }
    if failures:
        verdict = Verdict.FAIL
    elif not r0.valid:
        verdict = Verdict.INCONCLUSIVE
    else:
        verdict = Verdict.PASS
    return AuditReport("alternate_seed", verdict, evidence, logs, runs)
