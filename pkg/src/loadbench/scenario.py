"""Scenario vocabulary, benchmark profiles and run settings.

Everything here is immutable. Durations are seconds (floats) at this level;
the harness converts to integer nanoseconds internally.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

OFFICIAL_MIN_DURATION = 60.0
UINT64_MAX = (1 << 64) - 1


class Scenario(str, enum.Enum):
    SINGLE_STREAM = "single_stream"
    MULTI_STREAM = "multi_stream"
    SERVER = "server"
    OFFLINE = "offline"


class TestMode(str, enum.Enum):
    __test__ = False  # keep pytest from collecting this

    ACCURACY = "accuracy"
    PERFORMANCE = "performance"


class ClockMode(str, enum.Enum):
    VIRTUAL = "virtual"
    WALL = "wall"


class SettingsError(ValueError):
    """Raised when settings or profile documents are inconsistent."""

    def __init__(self, errors: Sequence[str] | str):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class BenchmarkProfile:
    """Per-task constants: latency bounds, accuracy target, minimum counts."""

    task_name: str
    server_qos_bound: float
    multistream_arrival_interval: float
    tail_percentile: float
    server_overtime_max: float
    accuracy_reference: float
    accuracy_target_fraction: float
    min_queries: Mapping[Scenario, int]
    offline_min_samples: int = 24576
    multistream_supported: bool = True

    def __post_init__(self):
        mq = {Scenario(k): int(v) for k, v in dict(self.min_queries).items()}
        missing = set(Scenario) - set(mq)
        if missing:
            raise SettingsError(
                f"profile {self.task_name!r}: min_queries missing "
                + ", ".join(sorted(s.value for s in missing))
            )
        object.__setattr__(self, "min_queries", MappingProxyType(mq))
        errors = []
        if not 0.0 < self.tail_percentile < 1.0:
            errors.append("tail_percentile must be in (0, 1)")
        if self.server_qos_bound <= 0 or self.multistream_arrival_interval <= 0:
            errors.append("latency bounds must be positive")
        if not 0.0 <= self.server_overtime_max < 1.0:
            errors.append("server_overtime_max must be in [0, 1)")
        if not 0.0 < self.accuracy_target_fraction <= 1.0:
            errors.append("accuracy_target_fraction must be in (0, 1]")
        if self.offline_min_samples < 1 or any(v < 1 for v in mq.values()):
            errors.append("minimum counts must be >= 1")
        if errors:
            raise SettingsError([f"profile {self.task_name!r}: {e}" for e in errors])

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["min_queries"] = {s.value: self.min_queries[s] for s in Scenario}
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BenchmarkProfile":
        _reject_unknown(cls, data, "profile")
        return cls(**data)


def _reject_unknown(cls, data: Mapping[str, Any], what: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise SettingsError(f"unknown {what} keys: {', '.join(unknown)}")


def _load_documents(text: str) -> list[dict[str, Any]]:
    """Parse a single JSON document (object or list) or JSON Lines."""
    stripped = text.strip()
    if not stripped:
        return []
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        docs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                docs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SettingsError(f"line {lineno}: {exc.msg}") from None
        return docs
    return doc if isinstance(doc, list) else [doc]


def _read_builtin() -> tuple[BenchmarkProfile, ...]:
    text = resources.files("loadbench").joinpath("profiles.json").read_text()
    return tuple(BenchmarkProfile.from_dict(d) for d in _load_documents(text))


_BUILTIN = _read_builtin()


def builtin_profiles() -> list[BenchmarkProfile]:
    """The five shipped task profiles.

    Machine translation keeps ``multistream_supported`` set even though no
    multistream results were ever submitted for it.
    """
    return list(_BUILTIN)


def load_profiles(path: str | Path) -> list[BenchmarkProfile]:
    return [BenchmarkProfile.from_dict(d) for d in _load_documents(Path(path).read_text())]


def profile_registry(
    extra: Iterable[BenchmarkProfile] = (),
) -> dict[str, BenchmarkProfile]:
    """Built-in profiles keyed by task name, overridden by ``extra``."""
    reg = {p.task_name: p for p in _BUILTIN}
    reg.update({p.task_name: p for p in extra})
    return reg


def profile(name: str, registry: Mapping[str, BenchmarkProfile] | None = None) -> BenchmarkProfile:
    reg = profile_registry() if registry is None else registry
    try:
        return reg[name]
    except KeyError:
        raise SettingsError(f"unknown profile {name!r}") from None


@dataclass(frozen=True)
class TestSettings:
    """Configuration of one run.

    ``None`` fields are filled by :func:`validate_settings`. ``profile`` may
    be a task name until validated.
    """

    __test__ = False

    scenario: Scenario
    mode: TestMode = TestMode.PERFORMANCE
    profile: BenchmarkProfile | str = "image-classification-heavy"
    schedule_seed: int = 0x4D4C5045524631
    sample_seed: int = 0x53414D504C4531
    target_qps: float | None = None
    samples_per_query: int | None = None
    min_duration: float | None = None
    min_query_count: int | None = None
    performance_sample_count: int = 1024
    clock: ClockMode = ClockMode.VIRTUAL
    offline_expected_qps: float | None = None
    accuracy_log_probability: float = 0.0
    watchdog_timeout: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "mode", TestMode(self.mode))
        object.__setattr__(self, "clock", ClockMode(self.clock))

    @property
    def bench_profile(self) -> BenchmarkProfile:
        if isinstance(self.profile, str):
            raise SettingsError("settings not validated: profile is still a name")
        return self.profile

    @property
    def is_official(self) -> bool:
        p = self.bench_profile
        return (
            self.min_duration is not None
            and self.min_duration >= OFFICIAL_MIN_DURATION
            and self.min_query_count is not None
            and self.min_query_count >= p.min_queries[self.scenario]
        )

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k in ("scenario", "mode", "clock"):
            d[k] = d[k].value
        if isinstance(self.profile, BenchmarkProfile):
            d["profile"] = self.profile.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TestSettings":
        _reject_unknown(cls, data, "settings")
        data = dict(data)
        if isinstance(data.get("profile"), Mapping):
            data["profile"] = BenchmarkProfile.from_dict(data["profile"])
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise SettingsError(str(exc)) from None


def load_settings(path: str | Path) -> TestSettings:
    docs = _load_documents(Path(path).read_text())
    if len(docs) != 1:
        raise SettingsError(f"{path}: expected one settings document, found {len(docs)}")
    return TestSettings.from_dict(docs[0])


def default_watchdog(settings: TestSettings) -> float:
    p = settings.bench_profile
    if settings.scenario is Scenario.SERVER:
        return 10 * p.server_qos_bound
    if settings.scenario is Scenario.MULTI_STREAM:
        return 10 * p.multistream_arrival_interval
    if settings.scenario is Scenario.SINGLE_STREAM:
        return 10 * max(p.server_qos_bound, p.multistream_arrival_interval)
    return max(60.0, 10 * (settings.min_duration or 0.0))


def validate_settings(
    settings: TestSettings,
    registry: Mapping[str, BenchmarkProfile] | None = None,
) -> TestSettings:
    """Resolve the profile, fill defaults and reject contradictions.

    Raises :class:`SettingsError` carrying every problem found.
    """
    errors: list[str] = []
    prof = settings.profile
    if isinstance(prof, str):
        try:
            prof = profile(prof, registry)
        except SettingsError as exc:
            errors.extend(exc.errors)
            prof = None

    sc = settings.scenario
    upd: dict[str, Any] = {}

    if sc is Scenario.SERVER:
        if settings.target_qps is None:
            errors.append("target_qps required")
        elif not settings.target_qps > 0:
            errors.append("target_qps must be positive")
    elif settings.target_qps is not None:
        errors.append(f"target_qps does not apply to {sc.value}")

    if sc is Scenario.MULTI_STREAM:
        n = 1 if settings.samples_per_query is None else settings.samples_per_query
        if n < 1:
            errors.append("samples_per_query must be >= 1")
        upd["samples_per_query"] = n
        if prof is not None and not prof.multistream_supported:
            errors.append(f"profile {prof.task_name!r} does not support multistream")
    elif settings.samples_per_query is not None:
        errors.append(f"samples_per_query does not apply to {sc.value}")

    if sc is Scenario.OFFLINE:
        if settings.offline_expected_qps is not None and not settings.offline_expected_qps > 0:
            errors.append("offline_expected_qps must be positive")
    elif settings.offline_expected_qps is not None:
        errors.append(f"offline_expected_qps does not apply to {sc.value}")

    if settings.performance_sample_count < 1:
        errors.append("performance_sample_count must be >= 1")
    if settings.min_duration is not None and settings.min_duration < 0:
        errors.append("min_duration must be >= 0")
    if settings.min_query_count is not None and settings.min_query_count < 1:
        errors.append("min_query_count must be >= 1")
    if not 0.0 <= settings.accuracy_log_probability <= 1.0:
        errors.append("accuracy_log_probability must be in [0, 1]")
    if settings.watchdog_timeout is not None and not settings.watchdog_timeout > 0:
        errors.append("watchdog_timeout must be positive")
    for name in ("schedule_seed", "sample_seed"):
        v = getattr(settings, name)
        if not isinstance(v, int) or not 0 <= v <= UINT64_MAX:
            errors.append(f"{name} must be an unsigned 64-bit integer")

    if errors:
        raise SettingsError(errors)

    upd["profile"] = prof
    if settings.min_duration is None:
        upd["min_duration"] = OFFICIAL_MIN_DURATION
    if settings.min_query_count is None:
        upd["min_query_count"] = prof.min_queries[sc]
    out = replace(settings, **upd)
    if out.watchdog_timeout is None:
        out = replace(out, watchdog_timeout=default_watchdog(out))
    return out


class Query(NamedTuple):
    query_id: int
    sample_indices: Sequence[int]
    scheduled_ns: int


class QueryResponse(NamedTuple):
    """What a SUT hands back: one digest per sample, in query order.

    ``completion_ns`` is informational only: the harness always timestamps
    completions on its own clock when the callback arrives.
    """

    query_id: int
    payload_digests: Sequence[int] = ()
    completion_ns: int | None = None

    @property
    def payload_digest(self) -> int:
        return combine_digests(self.payload_digests)


def combine_digests(digests: Iterable[int]) -> int:
    h = 0xCBF29CE484222325
    for d in digests:
        h = ((h ^ (d & UINT64_MAX)) * 0x100000001B3) & UINT64_MAX
    return h


def seconds_to_ns(t: float) -> int:
    return int(round(t * 1e9))


def ns_to_seconds(t: int) -> float:
    return t / 1e9


__all__ = [
    "BenchmarkProfile",
    "ClockMode",
    "OFFICIAL_MIN_DURATION",
    "Query",
    "QueryResponse",
    "Scenario",
    "SettingsError",
    "TestMode",
    "TestSettings",
    "builtin_profiles",
    "combine_digests",
    "load_profiles",
    "load_settings",
    "ns_to_seconds",
    "profile",
    "profile_registry",
    "seconds_to_ns",
    "validate_settings",
]
