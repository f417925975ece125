"""The load-generator run loop.

Drives a :class:`~loadbench.sut.SystemUnderTest` through a scenario,
timestamps issues and completions on a shared clock and returns a
:class:`~loadbench.runlog.RunLog`. Validity is judged afterwards by
:mod:`loadbench.reporting`.
"""

from __future__ import annotations

import bisect
import logging
import math
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .clock import VirtualClock, WallClock, make_clock
from .reporting import RunResult, check_validity
from .rng import SeededRng, mix_seed
from .runlog import RunLog
from .scenario import (
    ClockMode,
    Query,
    QueryResponse,
    Scenario,
    TestMode,
    TestSettings,
    seconds_to_ns,
    validate_settings,
)
from .schedule import (
    ACCURACY_LOG_LABEL,
    SCHEDULE_LABEL,
    ScheduleSource,
    gen_poisson_schedule,
)
from .sut import SampleLibrary, SystemUnderTest

log = logging.getLogger(__name__)

OFFICIAL_SERVER_RUNS = 5


class HarnessError(RuntimeError):
    pass


class NoValidRateError(HarnessError):
    pass


class _Abort(Exception):
    def __init__(self, reason: str):
        self.reason = reason


class _Recorder:
    """Collects issue and completion records; safe to call from SUT threads."""

    def __init__(self, clock, keep_payload: bool, bound_ns: int | None = None):
        self.clock = clock
        self.keep_payload = keep_payload
        self.lock = threading.Lock()
        self.scheduled: list[int] = []
        self.issue: list[int] = []
        self.comp: list[int] = []
        self.counts: list[int] = []
        self.skips: list[int] = []
        self.indices: list = []
        self.payload: dict[int, Sequence[int]] = {}
        self.completed = 0
        self.last_done = 0
        self.over = 0
        self.skipped_queries = 0
        self.bound_ns = bound_ns
        self.errors: list[str] = []
        self.n = 0  # queries issued so far

    def preallocate(self, scheduled: list[int], counts: list[int], indices=None) -> None:
        """Size every column up front for a schedule known in advance."""
        n = len(scheduled)
        self.scheduled = list(scheduled)
        self.issue = list(scheduled)
        self.comp = [-1] * n
        self.counts = list(counts)
        self.skips = [0] * n
        if self.keep_payload:
            self.indices = indices

    def issued(self, query: Query, actual_ns: int) -> None:
        # Only the driver thread appends, and it does so before the SUT sees
        # the query, so completions never observe a half-recorded entry.
        self.scheduled.append(query.scheduled_ns)
        self.issue.append(actual_ns)
        self.comp.append(-1)
        self.counts.append(len(query.sample_indices))
        self.skips.append(0)
        if self.keep_payload:
            self.indices.append(query.sample_indices)
        self.n += 1

    def complete(self, response: QueryResponse) -> None:
        t = self.clock.now()
        qid = response.query_id
        with self.lock:
            if not 0 <= qid < self.n:
                msg = f"completion for unknown query_id {qid}"
                self.errors.append(msg)
                raise HarnessError(msg)
            if self.comp[qid] >= 0:
                msg = f"duplicate completion for query_id {qid}"
                self.errors.append(msg)
                raise HarnessError(msg)
            self.comp[qid] = t
            self.completed += 1
            if t > self.last_done:
                self.last_done = t
            if self.bound_ns is not None and t - self.issue[qid] > self.bound_ns:
                self.over += 1
            if self.keep_payload:
                self.payload[qid] = response.payload_digests
        self.clock.notify()


@dataclass
class _Ctx:
    sut: SystemUnderTest
    clock: VirtualClock | WallClock
    rec: _Recorder
    watchdog_ns: int
    stop_check: Callable[[], str | None] | None = None

    def issue(self, qid: int, indices, scheduled_ns: int) -> None:
        q = Query(qid, indices, scheduled_ns)
        self.rec.issued(q, self.clock.now())
        self.sut.issue_query(q)

    def wait_done(self, qid: int) -> None:
        comp = self.rec.comp
        deadline = self.rec.issue[qid] + self.watchdog_ns
        if not self.clock.run_until(lambda: comp[qid] >= 0, deadline):
            raise _Abort(f"watchdog: query {qid} not completed within {self.watchdog_ns} ns")

    def wait_all(self) -> None:
        rec = self.rec
        n = rec.n
        comp = rec.comp
        i = 0
        while i < n:
            if comp[i] < 0:
                self.wait_done(i)
            i += 1


def _resolve_clock(sut: SystemUnderTest, settings: TestSettings, clock):
    if clock is None:
        clock = getattr(sut, "clock", None)
    if clock is None:
        clock = make_clock(settings.clock)
    if clock.mode is not settings.clock:
        raise HarnessError(
            f"settings ask for a {settings.clock.value} clock but the SUT uses {clock.mode.value}"
        )
    return clock


def _drive_single_stream(ctx: _Ctx, rows, min_count: int, min_dur_ns: int) -> None:
    clock = ctx.clock
    i = 0
    while True:
        indices = rows(i)
        if indices is None:
            return
        ctx.issue(i, indices, clock.now())
        ctx.wait_done(i)
        i += 1
        if i >= min_count and clock.now() >= min_dur_ns:
            return


def _drive_multistream(
    ctx: _Ctx,
    rows,
    interval_ns: int,
    min_count: int,
    min_dur_ns: int,
    start_ns: int = 0,
    first_id: int = 0,
) -> None:
    """Fixed-interval issue with the skip rule.

    A slot whose predecessor is still in flight is skipped and the rest of
    the grid slides one interval later; the in-flight query is charged.
    """
    clock = ctx.clock
    rec = ctx.rec
    comp = rec.comp
    slot = 0
    i = first_id
    prev = -1
    while True:
        indices = rows(i)
        if indices is None:
            break
        t = start_ns + slot * interval_ns
        clock.wait_until(t)
        if prev >= 0:
            while comp[prev] < 0:
                if clock.now() - rec.issue[prev] > ctx.watchdog_ns:
                    raise _Abort(f"watchdog: query {prev} not completed within {ctx.watchdog_ns} ns")
                if not rec.skips[prev]:
                    rec.skipped_queries += 1
                rec.skips[prev] += 1
                slot += 1
                t = start_ns + slot * interval_ns
                clock.wait_until(t)
        ctx.issue(i, indices, t)
        prev = i
        i += 1
        slot += 1
        if ctx.stop_check is not None:
            reason = ctx.stop_check()
            if reason:
                raise _Abort(reason)
        if i - first_id >= min_count and t - start_ns >= min_dur_ns:
            break
    ctx.sut.flush()
    ctx.wait_all()


def _drive_server(ctx: _Ctx, times_ns: Sequence[int], rows: Sequence) -> None:
    """Open loop: issue times never depend on completions.

    The recorder must already be preallocated for ``times_ns``.
    """
    clock = ctx.clock
    rec = ctx.rec
    comp = rec.comp
    issue = rec.issue
    wd = ctx.watchdog_ns
    stop = ctx.stop_check
    oldest = 0
    wait_until, now = clock.wait_until, clock.now
    issue_query = ctx.sut.issue_query
    for i, t in enumerate(times_ns):
        wait_until(t)
        q = Query(i, rows[i], t)
        issue[i] = now()
        rec.n = i + 1
        issue_query(q)
        while oldest < i and comp[oldest] >= 0:
            oldest += 1
        if oldest < i and clock.now() - issue[oldest] > wd:
            raise _Abort(f"watchdog: query {oldest} not completed within {wd} ns")
        if stop is not None and (i & 255) == 0:
            reason = stop()
            if reason:
                raise _Abort(reason)
    ctx.sut.flush()
    ctx.wait_all()


def _drive_offline(ctx: _Ctx, indices) -> None:
    ctx.issue(0, indices, 0)
    ctx.sut.flush()
    ctx.wait_all()


def _finalize(
    settings: TestSettings,
    rec: _Recorder,
    clock,
    aborted: str | None,
    host_t0: float,
    unix_t0: float,
) -> RunLog:
    if rec.errors:
        raise HarnessError("; ".join(rec.errors))
    with rec.lock:
        n = rec.n
        sched = np.asarray(rec.scheduled[:n], dtype=np.int64)
        issue = np.asarray(rec.issue[:n], dtype=np.int64)
        comp = np.asarray(rec.comp[:n], dtype=np.int64)
        counts = np.asarray(rec.counts[:n], dtype=np.int64)
        skips = np.asarray(rec.skips[:n], dtype=np.int64)
        end_ns = rec.last_done if aborted is None else max(clock.now(), rec.last_done)
        logged: dict[int, tuple[tuple[int, ...], tuple[int, ...]]] = {}
        if rec.keep_payload:
            if settings.mode is TestMode.ACCURACY:
                chosen = range(n)
            else:
                draws = SeededRng(settings.sample_seed, ACCURACY_LOG_LABEL).uniform_open_closed(n)
                chosen = np.flatnonzero(draws <= settings.accuracy_log_probability).tolist()
            for qid in chosen:
                if qid in rec.payload:
                    logged[qid] = (
                        tuple(int(x) for x in rec.indices[qid]),
                        tuple(int(x) for x in rec.payload[qid]),
                    )
    lateness = int((issue - sched).max()) if n and clock.mode is ClockMode.WALL else 0
    wall = {
        "start_unix_s": unix_t0,
        "host_elapsed_s": time.perf_counter() - host_t0,
        "max_issue_lateness_ns": lateness,
    }
    return RunLog(
        settings=settings,
        scheduled_ns=sched,
        issue_ns=issue,
        completion_ns=comp,
        sample_counts=counts,
        skips=skips,
        end_ns=int(end_ns),
        logged=logged,
        aborted=aborted,
        wall=wall,
    )


def _check_library(lib: SampleLibrary, settings: TestSettings) -> None:
    if settings.performance_sample_count > lib.total_samples:
        raise HarnessError(
            f"performance_sample_count {settings.performance_sample_count} exceeds "
            f"library size {lib.total_samples}"
        )


def run_performance(
    sut: SystemUnderTest,
    lib: SampleLibrary,
    settings: TestSettings,
    clock=None,
    *,
    early_stop: bool = False,
    sample_plan: np.ndarray | None = None,
) -> RunLog:
    """Timed run in performance mode.

    ``early_stop`` ends the run as soon as its verdict can only be invalid
    (used by the search drivers). ``sample_plan`` replaces the seeded sample
    selection with explicit rows (used by the caching audit).
    """
    settings = validate_settings(settings)
    if settings.mode is not TestMode.PERFORMANCE:
        raise HarnessError("run_performance needs mode=performance")
    _check_library(lib, settings)
    clock = _resolve_clock(sut, settings, clock)
    prof = settings.bench_profile
    sc = settings.scenario

    source = ScheduleSource(settings)
    schedule = source.initial()
    plan = schedule.sample_plan if sample_plan is None else np.asarray(sample_plan)
    if sample_plan is not None and sc is Scenario.SERVER and len(plan) < len(schedule):
        raise HarnessError("sample_plan shorter than the server schedule")
    extra: list[np.ndarray] = []

    def rows(i: int):
        if i < len(plan):
            return plan[i]
        if sample_plan is not None:
            return None
        k = i - len(plan)
        flat = sum(len(e) for e in extra)
        while k >= flat:
            chunk = source.extend(max(1024, len(plan) // 4))
            extra.append(chunk)
            flat += len(chunk)
        for e in extra:
            if k < len(e):
                return e[k]
            k -= len(e)

    keep = settings.accuracy_log_probability > 0
    bound_ns = seconds_to_ns(prof.server_qos_bound) if sc is Scenario.SERVER else None
    rec = _Recorder(clock, keep, bound_ns)
    ctx = _Ctx(sut, clock, rec, seconds_to_ns(settings.watchdog_timeout))
    if early_stop:
        ctx.stop_check = _early_stop_check(settings, rec, len(schedule))

    lib.load_samples(range(settings.performance_sample_count))
    host_t0, unix_t0 = time.perf_counter(), time.time()
    clock.start_run()
    sut.start_run(settings, rec.complete)
    aborted = None
    min_dur_ns = seconds_to_ns(settings.min_duration)
    try:
        if sc is Scenario.SINGLE_STREAM:
            _drive_single_stream(ctx, rows, settings.min_query_count, min_dur_ns)
        elif sc is Scenario.MULTI_STREAM:
            interval = seconds_to_ns(prof.multistream_arrival_interval)
            _drive_multistream(ctx, rows, interval, settings.min_query_count, min_dur_ns)
        elif sc is Scenario.SERVER:
            times = schedule.issue_ns.tolist()
            listed = plan[: len(times)].tolist()
            rec.preallocate(times, [len(r) for r in listed], listed)
            _drive_server(ctx, times, listed)
        else:
            _drive_offline(ctx, rows(0))
    except _Abort as exc:
        aborted = exc.reason
        log.info("run aborted: %s", aborted)
    out = _finalize(settings, rec, clock, aborted, host_t0, unix_t0)
    lib.unload_samples(range(settings.performance_sample_count))
    return out


def _early_stop_check(settings: TestSettings, rec: _Recorder, planned: int):
    prof = settings.bench_profile
    if settings.scenario is Scenario.SERVER:
        budget = math.floor(prof.server_overtime_max * planned + 1e-9)

        bound = rec.bound_ns
        clock = rec.clock

        def check():
            # queries issued more than a bound ago and still open are over for sure
            k = bisect.bisect_right(rec.issue, clock.now() - bound, 0, rec.n)
            sure = rec.over + max(0, k - rec.completed)
            if sure > budget:
                return f"early stop: {sure} queries over the latency bound"
            return None

        return check
    if settings.scenario is Scenario.MULTI_STREAM:
        budget = math.floor(0.01 * planned + 1e-9)

        def check():
            if rec.skipped_queries > budget:
                return f"early stop: {rec.skipped_queries} queries caused skipped intervals"
            return None

        return check
    return None


def run_accuracy(
    sut: SystemUnderTest, lib: SampleLibrary, settings: TestSettings, clock=None
) -> RunLog:
    """Issue every library sample exactly once and log every payload.

    Samples are loaded ``performance_sample_count`` at a time; within a chunk
    queries follow the scenario's shape and timing.
    """
    settings = validate_settings(settings)
    if settings.mode is not TestMode.ACCURACY:
        raise HarnessError("run_accuracy needs mode=accuracy")
    clock = _resolve_clock(sut, settings, clock)
    sc = settings.scenario
    rec = _Recorder(clock, keep_payload=True)
    ctx = _Ctx(sut, clock, rec, seconds_to_ns(settings.watchdog_timeout))
    total = lib.total_samples
    chunk = min(settings.performance_sample_count, total)
    sched_rng = SeededRng(settings.schedule_seed, SCHEDULE_LABEL)

    host_t0, unix_t0 = time.perf_counter(), time.time()
    clock.start_run()
    sut.start_run(settings, rec.complete)
    aborted = None
    try:
        for start in range(0, total, chunk):
            idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
            lib.load_samples(idx)
            base = rec.n
            if sc is Scenario.OFFLINE:
                ctx.issue(base, idx, clock.now())
                sut.flush()
                ctx.wait_all()
            else:
                width = settings.samples_per_query if sc is Scenario.MULTI_STREAM else 1
                qrows = [idx[j : j + width] for j in range(0, idx.size, width)]
                _drive_chunk(ctx, settings, qrows, base, sched_rng)
            lib.unload_samples(idx)
    except _Abort as exc:
        aborted = exc.reason
    return _finalize(settings, rec, clock, aborted, host_t0, unix_t0)


def _drive_chunk(ctx: _Ctx, settings: TestSettings, qrows, base: int, sched_rng) -> None:
    clock = ctx.clock
    sc = settings.scenario
    n = len(qrows)
    if sc is Scenario.SINGLE_STREAM:
        for j, r in enumerate(qrows):
            ctx.issue(base + j, r, clock.now())
            ctx.wait_done(base + j)
    elif sc is Scenario.MULTI_STREAM:
        interval = seconds_to_ns(settings.bench_profile.multistream_arrival_interval)

        def rows(i):
            return qrows[i - base] if i - base < n else None

        _drive_multistream(ctx, rows, interval, n, 0, clock.now(), base)
    else:
        t0 = clock.now()
        times = np.rint(gen_poisson_schedule(sched_rng, settings.target_qps, n) * 1e9)
        for j, r in enumerate(qrows):
            clock.wait_until(t0 + int(times[j]))
            ctx.issue(base + j, r, t0 + int(times[j]))
        ctx.sut.flush()
        ctx.wait_all()


def run(sut: SystemUnderTest, lib: SampleLibrary, settings: TestSettings, clock=None) -> RunLog:
    if TestMode(settings.mode) is TestMode.ACCURACY:
        return run_accuracy(sut, lib, settings, clock)
    return run_performance(sut, lib, settings, clock)


@dataclass
class OfficialServerResult:
    logs: list[RunLog]
    results: list[RunResult]
    selected: RunResult


def select_official(results: Sequence[RunResult]) -> RunResult:
    """Minimum of the per-run metrics; invalid if any run is invalid."""
    if not results:
        raise HarnessError("no runs to select from")
    best = min(results, key=lambda r: r.metric_value)
    violations = []
    for k, r in enumerate(results):
        violations.extend((f"run {k}: {rule}", m, lim) for rule, m, lim in r.violations)
    return replace(best, valid=not violations, violations=violations)


def run_server_official(
    sut: SystemUnderTest, lib: SampleLibrary, settings: TestSettings, clock=None
) -> OfficialServerResult:
    """Five server runs on seeds derived from the schedule seed."""
    settings = validate_settings(settings)
    if settings.scenario is not Scenario.SERVER:
        raise HarnessError("the five-run protocol applies to the server scenario")
    logs, results = [], []
    for k in range(OFFICIAL_SERVER_RUNS):
        s = replace(settings, schedule_seed=mix_seed(settings.schedule_seed, k))
        lg = run_performance(sut, lib, s, clock)
        logs.append(lg)
        results.append(check_validity(lg))
    return OfficialServerResult(logs, results, select_official(results))


def _is_valid(sut, lib, settings, clock) -> bool:
    lg = run_performance(sut, lib, settings, clock, early_stop=True)
    return check_validity(lg).valid


def find_max_qps(
    sut: SystemUnderTest,
    lib: SampleLibrary,
    base_settings: TestSettings,
    lo: float,
    hi: float,
    resolution: float,
    clock=None,
    trace: list | None = None,
) -> float:
    """Largest tested target QPS whose server run is valid, bisected to ``resolution``."""
    if not lo < hi:
        raise ValueError("lo must be below hi")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    def ok(rate: float) -> bool:
        v = _is_valid(sut, lib, replace(base_settings, target_qps=rate), clock)
        if trace is not None:
            trace.append((rate, v))
        log.debug("qps %.6g -> %s", rate, "valid" if v else "invalid")
        return v

    if not ok(lo):
        raise NoValidRateError(f"no valid rate: {lo} QPS already fails")
    if ok(hi):
        return hi
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def find_max_streams(
    sut: SystemUnderTest,
    lib: SampleLibrary,
    base_settings: TestSettings,
    max_n: int,
    clock=None,
    trace: list | None = None,
) -> int:
    """Largest samples-per-query N <= ``max_n`` with a valid multistream run.

    Bisection; assumes validity is monotone in N.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")

    def ok(n: int) -> bool:
        v = _is_valid(sut, lib, replace(base_settings, samples_per_query=n), clock)
        if trace is not None:
            trace.append((n, v))
        return v

    if not ok(1):
        raise NoValidRateError("no valid stream count: N = 1 already fails")
    if max_n == 1 or ok(max_n):
        return max_n
    lo, hi = 1, max_n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
