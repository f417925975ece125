import math
import random
import sys
import textwrap

import numpy as np
import pytest

from helpers import DoubleSut, SilentSut, TraceSut, WrongIdSut
from loadbench.clock import VirtualClock, WallClock
from loadbench.harness import (
    HarnessError,
    NoValidRateError,
    find_max_qps,
    find_max_streams,
    run,
    run_accuracy,
    run_performance,
    run_server_official,
    select_official,
)
from loadbench.reporting import RunResult, check_validity, digest_accuracy
from loadbench.scenario import ClockMode, Scenario, TestMode, TestSettings, profile
from loadbench.sim import SimConfig, SimulatedSut, reference_digests
from loadbench.sut import InMemoryLibrary, SubprocessSut

MS = 1_000_000


def ms_settings(**kw):
    kw.setdefault("min_duration", 0.0)
    return TestSettings(Scenario.MULTI_STREAM, **kw)


# -- multistream skip rule ---------------------------------------------------


def test_hand_trace_two_skips():
    clock = VirtualClock()
    sut = TraceSut(clock, [120 * MS, 10 * MS])
    lg = run_performance(sut, InMemoryLibrary(16), ms_settings(min_query_count=2, performance_sample_count=16))
    assert lg.skips.tolist() == [2, 0]
    assert lg.issue_ns.tolist() == [0, 150 * MS]
    assert lg.skipped_intervals == 2 and lg.queries_with_skips == 1


def test_completion_on_the_slot_is_not_a_skip():
    clock = VirtualClock()
    sut = TraceSut(clock, [50 * MS, 50 * MS, 50 * MS])
    lg = run_performance(sut, InMemoryLibrary(16), ms_settings(min_query_count=3, performance_sample_count=16))
    assert lg.skipped_intervals == 0
    assert lg.issue_ns.tolist() == [0, 50 * MS, 100 * MS]


def skip_oracle(service_ns, interval_ns):
    """Event-by-event replay of the fixed grid with sliding slots."""
    events = []  # (time, kind) with completions before slot checks at equal times
    slot_time = 0
    skips = []
    last = len(service_ns) - 1
    for k, svc in enumerate(service_ns):
        issue = slot_time
        done = issue + svc
        n = 0
        slot_time = issue + interval_ns
        # no query waits behind the last one, so it cannot cause a skip
        while k < last:
            # at a slot instant, a completion at that same instant counts as done
            if done <= slot_time:
                break
            n += 1
            slot_time += interval_ns
        skips.append(n)
        events.append((issue, done))
    return skips, [e[0] for e in events]


def test_skip_rule_matches_oracle_on_random_traces():
    rnd = random.Random(1234)
    interval = 50 * MS
    for trial in range(500):
        n = rnd.randint(1, 40)
        trace = []
        for _ in range(n):
            r = rnd.random()
            if r < 0.2:
                trace.append(rnd.randint(1, 4) * interval)  # land exactly on a slot
            elif r < 0.6:
                trace.append(rnd.randint(1, interval))
            else:
                trace.append(rnd.randint(1, 5 * interval))
        sut = TraceSut(VirtualClock(), trace)
        lg = run_performance(sut, InMemoryLibrary(8), ms_settings(min_query_count=n, performance_sample_count=8))
        skips, issues = skip_oracle(trace, interval)
        assert lg.skips.tolist() == skips, trial
        assert lg.issue_ns.tolist() == issues, trial
        assert sut.max_in_flight == 1


# -- scenario semantics ------------------------------------------------------


def test_single_stream_fixed_service():
    sut = SimulatedSut(SimConfig(base_latency_per_sample=0.005), VirtualClock())
    lg = run_performance(sut, InMemoryLibrary(1024), TestSettings(Scenario.SINGLE_STREAM))
    r = check_validity(lg)
    assert r.valid
    assert r.metric_value == 0.005
    assert lg.duration_ns >= 60 * 10**9
    assert lg.query_count == 12000  # 60 s / 5 ms; the 1,024-query minimum is not binding
    # closed loop: each query goes out the instant the previous one finishes
    assert np.array_equal(lg.issue_ns[1:], lg.completion_ns[:-1])


def test_single_stream_one_in_flight():
    clock = VirtualClock()
    rnd = random.Random(5)
    sut = TraceSut(clock, [rnd.randint(1, 9 * MS) for _ in range(300)])
    run_performance(sut, InMemoryLibrary(64), TestSettings(Scenario.SINGLE_STREAM, min_query_count=300, min_duration=0, performance_sample_count=64))
    assert sut.max_in_flight == 1


def test_server_is_open_loop():
    s = TestSettings(Scenario.SERVER, target_qps=200, min_query_count=2000, min_duration=0)
    fast = run_performance(SimulatedSut(SimConfig(base_latency_per_sample=0.0001), VirtualClock()), InMemoryLibrary(1024), s)
    slow = run_performance(SimulatedSut(SimConfig(base_latency_per_sample=0.004), VirtualClock()), InMemoryLibrary(1024), s)
    assert np.array_equal(fast.issue_ns, fast.scheduled_ns)
    assert np.array_equal(fast.issue_ns, slow.issue_ns)
    assert not np.array_equal(fast.completion_ns, slow.completion_ns)


def test_server_runs_to_min_duration():
    s = TestSettings(Scenario.SERVER, target_qps=50, min_query_count=10, min_duration=3.0)
    lg = run_performance(SimulatedSut(SimConfig(), VirtualClock()), InMemoryLibrary(1024), s)
    assert lg.query_count > 10 and lg.duration_ns >= 3 * 10**9
    assert check_validity(lg).valid


def test_offline_thousand_per_second():
    sut = SimulatedSut(SimConfig(base_latency_per_sample=0.001, max_batch=1), VirtualClock())
    lg = run_performance(sut, InMemoryLibrary(1024), TestSettings(Scenario.OFFLINE))
    assert lg.query_count == 1 and lg.sample_count == 24576
    assert lg.duration_ns == 24_576_000_000
    r = check_validity(lg)
    assert r.metric_value == pytest.approx(1000.0)
    assert not r.valid and r.violations[0][0] == "min_duration"


def test_samples_loaded_before_timing():
    lib = InMemoryLibrary(32)
    seen = []

    class Probe(TraceSut):
        def issue_query(self, query):
            seen.append(len(lib.loaded))
            super().issue_query(query)

    run_performance(Probe(VirtualClock(), []), lib, TestSettings(Scenario.SINGLE_STREAM, min_query_count=5, min_duration=0, performance_sample_count=32))
    assert seen and all(x == 32 for x in seen)
    assert lib.loaded == set()


def test_library_too_small():
    with pytest.raises(HarnessError):
        run_performance(TraceSut(VirtualClock(), []), InMemoryLibrary(10), TestSettings(Scenario.SINGLE_STREAM))


def test_mode_checks():
    with pytest.raises(HarnessError):
        run_performance(TraceSut(VirtualClock(), []), InMemoryLibrary(1024), TestSettings(Scenario.OFFLINE, mode=TestMode.ACCURACY))
    with pytest.raises(HarnessError):
        run_accuracy(TraceSut(VirtualClock(), []), InMemoryLibrary(1024), TestSettings(Scenario.OFFLINE))


def test_clock_mode_mismatch():
    with pytest.raises(HarnessError):
        run_performance(TraceSut(VirtualClock(), []), InMemoryLibrary(1024), TestSettings(Scenario.OFFLINE, clock=ClockMode.WALL))


# -- failure handling --------------------------------------------------------


@pytest.mark.parametrize("scenario, extra", [
    (Scenario.SINGLE_STREAM, {}),
    (Scenario.MULTI_STREAM, {}),
    (Scenario.SERVER, {"target_qps": 100}),
    (Scenario.OFFLINE, {}),
])
def test_watchdog_aborts(scenario, extra):
    s = TestSettings(scenario, min_query_count=50, min_duration=0, watchdog_timeout=0.5, **extra)
    lg = run_performance(SilentSut(VirtualClock()), InMemoryLibrary(1024), s)
    assert lg.aborted and "watchdog" in lg.aborted
    r = check_validity(lg)
    assert not r.valid


def test_unknown_query_id_is_an_error():
    with pytest.raises(HarnessError, match="unknown query_id"):
        run_performance(WrongIdSut(VirtualClock(), []), InMemoryLibrary(1024), TestSettings(Scenario.SINGLE_STREAM, min_query_count=3, min_duration=0))


def test_duplicate_completion_is_an_error():
    with pytest.raises(HarnessError, match="duplicate"):
        run_performance(DoubleSut(VirtualClock(), []), InMemoryLibrary(1024), TestSettings(Scenario.SINGLE_STREAM, min_query_count=3, min_duration=0))


# -- accuracy mode -----------------------------------------------------------


def test_accuracy_run_covers_library_once():
    lib = InMemoryLibrary(100)
    sut = SimulatedSut(SimConfig(), VirtualClock())
    lg = run_accuracy(sut, lib, TestSettings(Scenario.SINGLE_STREAM, mode=TestMode.ACCURACY, performance_sample_count=30))
    assert lg.query_count == 100
    idx = sorted(i for q in lg.logged.values() for i in q[0])
    assert idx == list(range(100))
    assert lib.load_calls == 4  # 30 + 30 + 30 + 10
    assert check_validity(lg).valid
    assert digest_accuracy(lg, reference_digests) == 1.0


@pytest.mark.parametrize("scenario, extra", [
    (Scenario.MULTI_STREAM, {"samples_per_query": 7}),
    (Scenario.SERVER, {"target_qps": 500}),
    (Scenario.OFFLINE, {}),
])
def test_accuracy_shapes(scenario, extra):
    lib = InMemoryLibrary(250)
    lg = run(SimulatedSut(SimConfig(), VirtualClock()), lib, TestSettings(scenario, mode=TestMode.ACCURACY, performance_sample_count=100, **extra))
    idx = sorted(i for q in lg.logged.values() for i in q[0])
    assert idx == list(range(250))
    assert check_validity(lg).valid


def test_accuracy_error_rate_binomial():
    lib = InMemoryLibrary(10_000)
    sut = SimulatedSut(SimConfig(accuracy_error_rate=0.02, seed=3), VirtualClock())
    lg = run_accuracy(sut, lib, TestSettings(Scenario.OFFLINE, mode=TestMode.ACCURACY))
    acc = digest_accuracy(lg, reference_digests)
    sigma = math.sqrt(0.02 * 0.98 / 10_000)
    assert abs(acc - 0.98) < 3 * sigma


def test_performance_mode_logs_seeded_subset():
    s = TestSettings(Scenario.SERVER, target_qps=100, min_query_count=4000, min_duration=0, accuracy_log_probability=0.1)
    a = run_performance(SimulatedSut(SimConfig(), VirtualClock()), InMemoryLibrary(1024), s)
    b = run_performance(SimulatedSut(SimConfig(), VirtualClock()), InMemoryLibrary(1024), s)
    assert a.logged == b.logged
    assert 300 < len(a.logged) < 500


# -- five-run protocol -------------------------------------------------------


def _result(value, valid=True):
    return RunResult(Scenario.SERVER, "t", "qps", value, "queries/s", valid,
                     [] if valid else [("server_overtime_fraction", 0.02, 0.01)], 1, 1, 1.0)


def test_select_official_takes_minimum():
    r = select_official([_result(v) for v in (100, 98, 99, 101, 100)])
    assert r.metric_value == 98 and r.valid


def test_select_official_any_invalid():
    rs = [_result(100)] * 4 + [_result(100, valid=False)]
    r = select_official(rs)
    assert not r.valid and r.violations[0][0].startswith("run 4")


def test_official_server_runs():
    s = TestSettings(Scenario.SERVER, target_qps=100, min_query_count=2000, min_duration=0)
    res = run_server_official(SimulatedSut(SimConfig(), VirtualClock()), InMemoryLibrary(1024), s)
    assert len(res.logs) == 5
    seeds = {lg.settings.schedule_seed for lg in res.logs}
    assert len(seeds) == 5
    assert all(r.metric_value == 100 for r in res.results)
    assert res.selected.metric_value == 100 and res.selected.valid


def test_official_server_one_bad_run():
    # a SUT that is slow only during the third run
    class Flaky(SimulatedSut):
        runs = 0

        def start_run(self, settings, complete):
            Flaky.runs += 1
            cfg = SimConfig(base_latency_per_sample=0.05 if Flaky.runs == 3 else 0.001)
            self.config = cfg
            self._svc_ns = [0] + [int(cfg.base_latency_per_sample * 1e9)]
            super().start_run(settings, complete)

    s = TestSettings(Scenario.SERVER, target_qps=100, min_query_count=2000, min_duration=0, watchdog_timeout=1000)
    res = run_server_official(Flaky(SimConfig(), VirtualClock()), InMemoryLibrary(1024), s)
    assert [r.valid for r in res.results] == [True, True, False, True, True]
    assert not res.selected.valid


def test_official_requires_server():
    with pytest.raises(HarnessError):
        run_server_official(TraceSut(VirtualClock(), []), InMemoryLibrary(1024), TestSettings(Scenario.OFFLINE))


# -- search drivers ----------------------------------------------------------


WIDE = profile("image-classification-heavy").__class__(
    **{**profile("image-classification-heavy").to_dict(), "task_name": "wide", "server_qos_bound": 1.0}
)


def test_find_max_qps_hard_capacity():
    sut = SimulatedSut(SimConfig(base_latency_per_sample=0.002), VirtualClock())
    s = TestSettings(Scenario.SERVER, profile=WIDE, target_qps=1, min_query_count=30000, min_duration=0)
    rate = find_max_qps(sut, InMemoryLibrary(1024), s, 100, 800, 20)
    assert abs(rate - 500) <= 20


def test_find_max_qps_no_valid_rate():
    sut = SimulatedSut(SimConfig(base_latency_per_sample=0.02), VirtualClock())
    s = TestSettings(Scenario.SERVER, target_qps=1, min_query_count=2000, min_duration=0)
    with pytest.raises(NoValidRateError, match="no valid rate"):
        find_max_qps(sut, InMemoryLibrary(1024), s, 1, 100, 5)


def test_find_max_qps_monotone_in_speed():
    s = TestSettings(Scenario.SERVER, target_qps=1, min_query_count=20000, min_duration=0)
    rates = []
    for base in (0.004, 0.002):
        sut = SimulatedSut(SimConfig(base_latency_per_sample=base, max_batch=4, batch_efficiency=0.6), VirtualClock())
        rates.append(find_max_qps(sut, InMemoryLibrary(1024), s, 10, 2000, 10))
    assert rates[1] >= rates[0]


def test_find_max_qps_argument_checks():
    sut = SimulatedSut(SimConfig(), VirtualClock())
    s = TestSettings(Scenario.SERVER, target_qps=1)
    with pytest.raises(ValueError):
        find_max_qps(sut, InMemoryLibrary(1024), s, 10, 5, 1)
    with pytest.raises(ValueError):
        find_max_qps(sut, InMemoryLibrary(1024), s, 1, 5, 0)


def test_find_max_streams_closed_form():
    sut = SimulatedSut(SimConfig(base_latency_per_sample=0.004), VirtualClock())
    s = TestSettings(Scenario.MULTI_STREAM, min_query_count=3000, min_duration=0)
    trace = []
    assert find_max_streams(sut, InMemoryLibrary(1024), s, 64, trace=trace) == 12
    assert (12, True) in trace and (13, False) in trace


def test_find_max_streams_fast_sut():
    sut = SimulatedSut(SimConfig(base_latency_per_sample=1e-6), VirtualClock())
    s = TestSettings(Scenario.MULTI_STREAM, min_query_count=500, min_duration=0)
    assert find_max_streams(sut, InMemoryLibrary(1024), s, 40) == 40


def test_find_max_streams_none_valid():
    sut = SimulatedSut(SimConfig(base_latency_per_sample=0.06), VirtualClock())
    s = TestSettings(Scenario.MULTI_STREAM, min_query_count=500, min_duration=0)
    with pytest.raises(NoValidRateError):
        find_max_streams(sut, InMemoryLibrary(1024), s, 8)


# -- wall clock and the subprocess bridge ------------------------------------


def test_wall_clock_single_stream():
    clock = WallClock()
    sut = SimulatedSut(SimConfig(base_latency_per_sample=0.002), clock)
    s = TestSettings(Scenario.SINGLE_STREAM, clock=ClockMode.WALL, min_query_count=20, min_duration=0)
    lg = run_performance(sut, InMemoryLibrary(1024), s)
    clock.close()
    assert lg.completed_count == 20
    assert lg.latencies_ns.min() >= 2 * MS
    assert "host_elapsed_s" in lg.wall


def test_wall_clock_server_issue_lateness_logged():
    clock = WallClock()
    sut = SimulatedSut(SimConfig(base_latency_per_sample=0.0005), clock)
    s = TestSettings(Scenario.SERVER, clock=ClockMode.WALL, target_qps=1000, min_query_count=200, min_duration=0)
    lg = run_performance(sut, InMemoryLibrary(1024), s)
    clock.close()
    assert lg.completed_count == 200
    assert np.all(lg.issue_ns >= lg.scheduled_ns)
    assert lg.wall["max_issue_lateness_ns"] >= 0


CHILD = textwrap.dedent(
    """
    from loadbench.sim import reference_digests
    from loadbench.sut import serve_stdio
    serve_stdio(lambda qid, idx: reference_digests(list(idx)).tolist())
    """
)


def test_subprocess_sut_round_trip():
    s = TestSettings(Scenario.SERVER, clock=ClockMode.WALL, target_qps=500, min_query_count=300,
                     min_duration=0, accuracy_log_probability=1.0, watchdog_timeout=5.0)
    with SubprocessSut([sys.executable, "-c", CHILD]) as sut:
        lg = run_performance(sut, InMemoryLibrary(1024), s)
    assert lg.completed_count == 300 and not lg.aborted
    assert digest_accuracy(lg, reference_digests) == 1.0


def test_subprocess_sut_offline_batch():
    s = TestSettings(Scenario.OFFLINE, clock=ClockMode.WALL, min_duration=0, watchdog_timeout=10.0)
    with SubprocessSut([sys.executable, "-c", CHILD]) as sut:
        lg = run_performance(sut, InMemoryLibrary(1024), s)
    assert lg.sample_count == 24576 and lg.completed_count == 1
