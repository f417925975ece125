"""A discrete-event simulated SUT.

Batches cost ``fixed_overhead + base * (1 + efficiency * (b - 1))``. The
simulator can also misbehave on purpose (caching, seed-keyed speedups,
degraded answers in performance mode) so the audits have something to catch.
"""

from __future__ import annotations

import threading
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass, fields, replace
from typing import Any, Mapping

import numpy as np

from .clock import VirtualClock, WallClock
from .rng import SeededRng
from .scenario import Query, QueryResponse, SettingsError, TestMode, TestSettings, seconds_to_ns
from .sut import Completion, SystemUnderTest

_M64 = (1 << 64) - 1
_REFERENCE_SALT = 0x5245464552454E43
_WRONG_MASK = 0xDEADBEEFDEADBEEF


@dataclass(frozen=True)
class SimConfig:
    base_latency_per_sample: float = 0.001
    fixed_overhead: float = 0.0
    max_batch: int = 1
    batch_efficiency: float = 1.0
    concurrency: int = 1
    queue_discipline: str = "fifo"
    jitter: float | None = None  # mean of an exponential term, None for none
    caching_enabled: bool = False
    cache_hit_latency: float = 0.0
    accuracy_error_rate: float = 0.0
    max_batch_wait: float = 0.0
    seed: int = 0
    # adversarial knobs, off by default
    performance_error_rate: float | None = None
    seed_keyed_first_gap: float | None = None
    seed_keyed_speedup: float = 1.0

    def __post_init__(self):
        errors = []
        if self.base_latency_per_sample < 0 or self.fixed_overhead < 0:
            errors.append("latencies must be >= 0")
        if self.max_batch < 1:
            errors.append("max_batch must be >= 1")
        if not 0.0 < self.batch_efficiency <= 1.0:
            errors.append("batch_efficiency must be in (0, 1]")
        if self.concurrency < 1:
            errors.append("concurrency must be >= 1")
        if self.queue_discipline != "fifo":
            errors.append("only the fifo queue discipline is supported")
        if self.jitter is not None and self.jitter < 0:
            errors.append("jitter mean must be >= 0")
        if self.cache_hit_latency < 0 or self.max_batch_wait < 0:
            errors.append("latencies must be >= 0")
        for name in ("accuracy_error_rate", "performance_error_rate"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                errors.append(f"{name} must be in [0, 1]")
        if self.seed_keyed_speedup <= 0:
            errors.append("seed_keyed_speedup must be positive")
        if errors:
            raise SettingsError(errors)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SettingsError(f"unknown sim config keys: {', '.join(unknown)}")
        return cls(**data)


def service_time(config: SimConfig, batch_size: int, rng: SeededRng | None = None) -> float:
    """Seconds to run one batch of ``batch_size`` samples."""
    if not 1 <= batch_size <= config.max_batch:
        raise ValueError(f"batch_size {batch_size} outside [1, {config.max_batch}]")
    t = config.fixed_overhead + config.base_latency_per_sample * (
        1 + config.batch_efficiency * (batch_size - 1)
    )
    if config.jitter and rng is not None:
        t += -config.jitter * np.log1p(-rng.random())
    return t


def _mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def reference_digests(indices) -> np.ndarray:
    """Ground-truth payload digest of each sample index."""
    return _mix(np.asarray(indices, dtype=np.uint64) ^ np.uint64(_REFERENCE_SALT))


def reference_digest(index: int) -> int:
    return int(reference_digests([index])[0])


def _digests_for(seed: int, error_rate: float, indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.uint64)
    ref = reference_digests(idx)
    if error_rate <= 0.0:
        return ref
    with np.errstate(over="ignore"):
        key = idx * np.uint64(0xD1B54A32D192ED03) ^ np.uint64(seed & _M64)
    u = (_mix(key) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return np.where(u < error_rate, ref ^ np.uint64(_WRONG_MASK), ref)


def sim_accuracy_response(config: SimConfig, sample_index: int, error_rate: float | None = None) -> int:
    """Digest the simulator returns for one sample.

    Wrong with probability ``error_rate`` (default: the config's accuracy
    error rate), decided by a hash of (config seed, index) so the same sample
    always gets the same answer.
    """
    rate = config.accuracy_error_rate if error_rate is None else error_rate
    return int(_digests_for(config.seed, rate, [sample_index])[0])


class SimulatedSut(SystemUnderTest):
    """Queueing model with ``concurrency`` executors and opportunistic batching."""

    def __init__(self, config: SimConfig, clock: VirtualClock | WallClock, name: str = "sim"):
        self.config = config
        self.clock = clock
        self.name = name
        self.cache: set[int] = set()
        self._digest_tables: dict[float, np.ndarray] = {}
        self._jitter_rng = SeededRng(config.seed, "jitter")
        self._lock = threading.RLock()
        self._wait_ns = seconds_to_ns(config.max_batch_wait)
        self._keyed = config.seed_keyed_first_gap is not None
        self._svc_ns = None
        if not config.jitter:
            self._svc_ns = [0] + [
                seconds_to_ns(service_time(config, b)) for b in range(1, config.max_batch + 1)
            ]
        self._reset_run()

    def _reset_run(self) -> None:
        # entries: [query, next position to batch, size, arrival ns, samples done]
        self._queue: deque = deque()
        self._queued = 0
        self._idle = self.config.concurrency
        self._arrivals: list[int] = []
        self._speedup = 1.0
        self._wait_timer = False
        self._flushing = False
        self._complete: Completion | None = None
        self._error_rate = self.config.accuracy_error_rate
        self._oldest_arrival = 0
        self.batch_count = 0
        self.batched_samples = 0

    def start_run(self, settings: TestSettings, complete: Completion) -> None:
        self._reset_run()
        self._complete = complete
        cfg = self.config
        if settings.mode is TestMode.PERFORMANCE and cfg.performance_error_rate is not None:
            self._error_rate = cfg.performance_error_rate

    def issue_query(self, query: Query) -> None:
        with self._lock:
            n = len(query.sample_indices)
            now = self.clock.now()
            queue = self._queue
            if not queue:
                self._oldest_arrival = now
            queue.append([query, 0, n, now, 0])
            self._queued += n
            if self._keyed and len(self._arrivals) < 2:
                self._note_arrival(now)
            if self._idle:
                self._dispatch()

    def _note_arrival(self, now: int) -> None:
        cfg = self.config
        self._arrivals.append(now)
        if len(self._arrivals) == 2:
            gap = self._arrivals[1] - self._arrivals[0]
            if gap == seconds_to_ns(cfg.seed_keyed_first_gap):
                self._speedup = cfg.seed_keyed_speedup

    def flush(self) -> None:
        with self._lock:
            self._flushing = True
            self._dispatch()

    def _on_wait_timer(self) -> None:
        with self._lock:
            self._wait_timer = False
            self._dispatch(force=True)

    def _dispatch(self, force: bool = False) -> None:
        cfg = self.config
        clock = self.clock
        queue = self._queue
        max_batch = cfg.max_batch
        table = self._svc_ns
        if self._speedup != 1.0 or cfg.caching_enabled:
            table = None
        while self._idle and self._queued:
            queued = self._queued
            if self._wait_ns and queued < max_batch and not (force or self._flushing):
                if not self._wait_timer:
                    self._wait_timer = True
                    clock.call_at(self._oldest_arrival + self._wait_ns, self._on_wait_timer)
                return
            force = False
            want = max_batch if queued > max_batch else queued
            entry = queue[0]
            if entry[2] - entry[1] == want:
                # the head query alone fills the batch
                queue.popleft()
                pieces = ((entry, entry[1], want),)
                entry[1] = entry[2]
            else:
                pieces = []
                taken = 0
                while taken < want:
                    entry = queue[0]
                    pos = entry[1]
                    k = entry[2] - pos
                    if k > want - taken:
                        k = want - taken
                    pieces.append((entry, pos, k))
                    taken += k
                    entry[1] = pos + k
                    if entry[1] == entry[2]:
                        queue.popleft()
            if queue:
                self._oldest_arrival = queue[0][3]
            self._queued = queued - want
            self._idle -= 1
            self.batch_count += 1
            self.batched_samples += want
            if table is not None:
                svc_ns = table[want]
            else:
                svc_ns = seconds_to_ns(self._batch_seconds(pieces, want))
            clock.call_at(clock.now() + svc_ns, self._finish, pieces)

    def _batch_seconds(self, pieces, taken: int) -> float:
        cfg = self.config
        misses = taken
        hits = 0
        if cfg.caching_enabled:
            cache = self.cache
            misses = 0
            for entry, pos, k in pieces:
                for idx in entry[0].sample_indices[pos : pos + k]:
                    idx = int(idx)
                    if idx in cache:
                        hits += 1
                    else:
                        cache.add(idx)
                        misses += 1
        svc = hits * cfg.cache_hit_latency
        if misses:
            svc += service_time(cfg, misses, self._jitter_rng)
        return svc / self._speedup

    def _finish(self, pieces) -> None:
        with self._lock:
            self._idle += 1
            complete = self._complete
            rate = self._error_rate
            for entry, _, k in pieces:
                entry[4] += k
                if entry[4] == entry[2]:
                    q = entry[0]
                    complete(QueryResponse(q.query_id, _LazyDigests(self, rate, q.sample_indices)))
            if self._queued:
                self._dispatch()

    def digests(self, error_rate: float, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        table = self._digest_tables.get(error_rate)
        top = int(idx.max()) + 1 if idx.size else 0
        if table is None or table.size < top:
            size = max(top, 1024 if table is None else 2 * table.size)
            table = _digests_for(self.config.seed, error_rate, np.arange(size))
            self._digest_tables[error_rate] = table
        return table[idx]


class _LazyDigests(Sequence):
    """Payload digests computed only if someone looks at them."""

    __slots__ = ("_sut", "_rate", "_idx", "_values")

    def __init__(self, sut: SimulatedSut, rate: float, idx):
        self._sut, self._rate, self._idx = sut, rate, idx
        self._values = None

    def _get(self) -> np.ndarray:
        if self._values is None:
            self._values = self._sut.digests(self._rate, self._idx)
        return self._values

    def __len__(self) -> int:
        return len(self._idx)

    def __getitem__(self, i):
        return self._get()[i]

    def __iter__(self):
        return iter(self._get().tolist())


def sim_sut(config: SimConfig, clock: VirtualClock | WallClock, name: str = "sim") -> SimulatedSut:
    return SimulatedSut(config, clock, name)


def with_changes(config: SimConfig, **changes) -> SimConfig:
    return replace(config, **changes)


def keyed_to_schedule(config: SimConfig, settings: TestSettings, speedup: float) -> SimConfig:
    """Adversarial config that runs ``speedup`` times faster only when the
    first inter-arrival gap matches the server schedule of ``settings``."""
    from .scenario import validate_settings
    from .schedule import build_schedule

    sched = build_schedule(validate_settings(settings))
    if len(sched) < 2:
        raise ValueError("need at least two scheduled queries to key on")
    gap_ns = int(sched.issue_ns[1] - sched.issue_ns[0])
    return replace(config, seed_keyed_first_gap=gap_ns / 1e9, seed_keyed_speedup=speedup)
