"""Seeded query schedules and sample-index plans for each scenario."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import SeededRng
from .scenario import Scenario, TestSettings, seconds_to_ns

SCHEDULE_LABEL = "schedule"
SAMPLES_LABEL = "samples"
ACCURACY_LOG_LABEL = "accuracy-log"


def gen_sample_indices(rng: SeededRng, count: int, library_size: int) -> np.ndarray:
    """Uniform draws with replacement from ``[0, library_size)``."""
    if library_size < 1:
        raise ValueError("library_size must be >= 1")
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    return rng.integers_below(library_size, count)


def unit_exponential_gaps(rng: SeededRng, count: int) -> np.ndarray:
    """Rate-1 exponential gaps by inversion, ``-ln(U)`` with U in (0, 1]."""
    if count <= 0:
        return np.zeros(0)
    return -np.log(rng.uniform_open_closed(count))


def gen_poisson_schedule(rng: SeededRng, rate_qps: float, count: int) -> np.ndarray:
    """Arrival times in seconds of a Poisson process at ``rate_qps``."""
    if not rate_qps > 0:
        raise ValueError("rate_qps must be positive")
    return np.cumsum(unit_exponential_gaps(rng, count) / rate_qps)


def gen_multistream_schedule(interval: float, count: int) -> np.ndarray:
    """Nominal issue times ``k * interval`` in seconds."""
    if not interval > 0:
        raise ValueError("interval must be positive")
    return np.arange(max(count, 0), dtype=np.float64) * interval


class _StreamCursor:
    """Reader over a shared, lazily grown prefix of one (seed, label) stream.

    Re-running with the same seeds (as a rate search does) then costs no
    generator work; the values are identical to drawing from a fresh
    :class:`SeededRng`.
    """

    _shared: dict[tuple[int, str], list] = {}
    _max_streams = 16

    def __init__(self, seed: int, label: str):
        key = (seed, label)
        entry = self._shared.pop(key, None)
        if entry is None:
            entry = [np.zeros(0, dtype=np.uint64), SeededRng(seed, label)]
        self._shared[key] = entry
        while len(self._shared) > self._max_streams:
            self._shared.pop(next(iter(self._shared)))
        self._entry = entry
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        entry = self._entry
        need = self.pos + n - entry[0].size
        if need > 0:
            more = max(need, entry[0].size // 2, 4096)
            entry[0] = np.concatenate([entry[0], entry[1].u64_array(more)])
        out = entry[0][self.pos : self.pos + n]
        self.pos += n
        return out

    def uniform_open_closed(self, n: int) -> np.ndarray:
        return ((self.take(n) >> np.uint64(11)).astype(np.float64) + 1.0) * (1.0 / (1 << 53))

    def integers_below(self, bound: int, n: int) -> np.ndarray:
        """Same draws as repeated :meth:`SeededRng.randbelow`."""
        limit = ((1 << 64) // bound) * bound
        raw = self.take(n)
        if limit < (1 << 64):
            keep = raw[raw < np.uint64(limit)]
            while keep.size < n:
                extra = self.take(n - keep.size)
                keep = np.concatenate([keep, extra[extra < np.uint64(limit)]])
            raw = keep
        return (raw % np.uint64(bound)).astype(np.int64)


@dataclass(frozen=True)
class Schedule:
    """Precomputed issue times (integer ns) and per-query sample indices.

    ``sample_plan`` is 2-D: one row per query. Single-stream rows carry
    placeholder times of 0 because each query goes out on the previous
    completion.
    """

    issue_ns: np.ndarray
    sample_plan: np.ndarray

    def __post_init__(self):
        if self.issue_ns.shape[0] != self.sample_plan.shape[0]:
            raise ValueError("issue times and sample plan differ in length")
        if self.issue_ns.size > 1 and np.any(np.diff(self.issue_ns) < 0):
            raise ValueError("issue times must be nondecreasing")
        self.issue_ns.setflags(write=False)
        self.sample_plan.setflags(write=False)

    def __len__(self) -> int:
        return self.issue_ns.shape[0]

    @property
    def issue_times(self) -> np.ndarray:
        return self.issue_ns / 1e9

    def __eq__(self, other) -> bool:
        if not isinstance(other, Schedule):
            return NotImplemented
        return np.array_equal(self.issue_ns, other.issue_ns) and np.array_equal(
            self.sample_plan, other.sample_plan
        )

    __hash__ = None


class ScheduleSource:
    """Deterministic producer of schedule rows for validated settings.

    ``initial()`` gives the precomputed part; ``extend()`` continues the same
    sample stream when a closed-loop run must go on to reach the minimum
    duration.
    """

    def __init__(self, settings: TestSettings):
        self.settings = settings
        self._samples = _StreamCursor(settings.sample_seed, SAMPLES_LABEL)
        self._produced = 0
        sc = settings.scenario
        if sc is Scenario.MULTI_STREAM:
            self.width = settings.samples_per_query
        elif sc is Scenario.OFFLINE:
            self.width = offline_sample_count(settings)
        else:
            self.width = 1

    def _plan(self, rows: int) -> np.ndarray:
        idx = self._samples.integers_below(self.settings.performance_sample_count, rows * self.width)
        return idx.reshape(rows, self.width)

    def initial(self) -> Schedule:
        s = self.settings
        sc = s.scenario
        if sc is Scenario.OFFLINE:
            rows = 1
            times = np.zeros(1, dtype=np.int64)
        elif sc is Scenario.SERVER:
            rows, times = self._server_times()
        elif sc is Scenario.MULTI_STREAM:
            rows = s.min_query_count
            interval = seconds_to_ns(s.bench_profile.multistream_arrival_interval)
            times = np.arange(rows, dtype=np.int64) * interval
        else:
            rows = s.min_query_count
            times = np.zeros(rows, dtype=np.int64)
        self._produced = rows
        return Schedule(times, self._plan(rows))

    def _server_times(self) -> tuple[int, np.ndarray]:
        s = self.settings
        rate = s.target_qps
        rows = s.min_query_count
        # extend until the last arrival reaches the minimum duration
        cursor = _StreamCursor(s.schedule_seed, SCHEDULE_LABEL)
        gaps = np.zeros(0)
        while True:
            gaps = np.concatenate([gaps, -np.log(cursor.uniform_open_closed(rows - gaps.size))])
            times = np.cumsum(gaps / rate)
            if times[-1] >= s.min_duration:
                break
            short = s.min_duration - times[-1]
            rows += max(int(math.ceil(short * rate * 1.1)), 16)
        if rows > s.min_query_count:
            rows = max(int(np.searchsorted(times, s.min_duration) + 1), s.min_query_count)
            times = times[:rows]
        return rows, np.rint(times * 1e9).astype(np.int64)

    def extend(self, rows: int) -> np.ndarray:
        """Next ``rows`` sample-plan rows, continuing the sample stream."""
        self._produced += rows
        return self._plan(rows)


def offline_sample_count(settings: TestSettings) -> int:
    n = settings.bench_profile.offline_min_samples
    if settings.offline_expected_qps is not None:
        n = max(n, math.ceil(settings.offline_expected_qps * settings.min_duration))
    return n


def build_schedule(settings: TestSettings) -> Schedule:
    return ScheduleSource(settings).initial()
