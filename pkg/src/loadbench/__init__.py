"""Seeded load generation and compliance checking for inference systems."""

from .audit import (
    AuditError,
    AuditReport,
    Verdict,
    audit_accuracy_verification,
    audit_alternate_seed,
    audit_caching,
)
from .clock import VirtualClock, WallClock, make_clock
from .harness import (
    HarnessError,
    NoValidRateError,
    find_max_qps,
    find_max_streams,
    run,
    run_accuracy,
    run_performance,
    run_server_official,
)
from .reporting import (
    AccuracyResult,
    LogFormatError,
    RunResult,
    check_accuracy,
    check_validity,
    read_log,
    summarize,
    write_log,
)
from .runlog import RunLog
from .scenario import (
    BenchmarkProfile,
    ClockMode,
    Query,
    QueryResponse,
    Scenario,
    SettingsError,
    TestMode,
    TestSettings,
    builtin_profiles,
    profile,
    validate_settings,
)
from .schedule import Schedule, build_schedule
from .sim import SimConfig, SimulatedSut
from .stats import ConfidenceSpec, QueryCount, min_query_count, percentile
from .sut import InMemoryLibrary, SampleLibrary, SubprocessSut, SystemUnderTest

__version__ = "0.1.0"
