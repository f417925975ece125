"""Command-line front end.

Every verb builds a :class:`TestSettings` from ``--config`` plus flags named
after the settings fields, drives either the built-in simulator
(``--sim-config``) or an external process (``--sut-command``), writes its
logs under ``--output-dir`` and exits 0 for valid/pass, 1 for
invalid/fail, 2 for usage or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from .audit import AuditError, Verdict, audit_accuracy_verification, audit_alternate_seed, audit_caching
from .clock import make_clock
from .harness import (
    HarnessError,
    NoValidRateError,
    find_max_qps,
    find_max_streams,
    run,
    run_server_official,
)
from .reporting import LogFormatError, RunResult, check_validity, read_log, summarize, write_log
from .runlog import RunLog
from .scenario import (
    ClockMode,
    Scenario,
    SettingsError,
    TestMode,
    TestSettings,
    load_profiles,
    load_settings,
    profile_registry,
    validate_settings,
)
from .sim import SimConfig, SimulatedSut
from .sut import InMemoryLibrary, SubprocessSut

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2

_SETTING_FLAGS = {
    "scenario": str,
    "mode": str,
    "profile": str,
    "schedule_seed": int,
    "sample_seed": int,
    "target_qps": float,
    "samples_per_query": int,
    "min_duration": float,
    "min_query_count": int,
    "performance_sample_count": int,
    "clock": str,
    "offline_expected_qps": float,
    "accuracy_log_probability": float,
    "watchdog_timeout": float,
}


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("settings")
    g.add_argument("--config", help="settings document (JSON)")
    for name, typ in _SETTING_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        if name == "scenario":
            g.add_argument(flag, choices=[s.value for s in Scenario])
        elif name == "mode":
            g.add_argument(flag, choices=[m.value for m in TestMode])
        elif name == "clock":
            g.add_argument(flag, choices=[c.value for c in ClockMode])
        else:
            g.add_argument(flag, type=_int_any if typ is int else typ)
    g.add_argument("--seed", type=_int_any, help="sets both schedule and sample seeds")
    g.add_argument("--virtual-clock", action="store_true", help="shorthand for --clock virtual")
    g.add_argument("--profiles", help="extra benchmark profiles (JSON or JSONL)")
    s = p.add_argument_group("system under test")
    s.add_argument("--sim-config", help="simulator configuration (JSON)")
    s.add_argument("--sut-command", help="external SUT command speaking the stdio protocol")
    s.add_argument("--library-size", type=int, help="sample library size (default: performance_sample_count)")
    p.add_argument("--output-dir", default=".", help="where logs are written")
    p.add_argument("-v", "--verbose", action="store_true")


def _int_any(text: str) -> int:
    return int(text, 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loadbench", description="Inference load generator")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="one scenario run")
    _common(p)

    p = sub.add_parser("official-server", help="five-run server protocol")
    _common(p)

    p = sub.add_parser("search-qps", help="largest valid server rate")
    _common(p)
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--resolution", type=float, required=True)

    p = sub.add_parser("search-streams", help="largest valid multistream N")
    _common(p)
    p.add_argument("--max-n", type=int, required=True)

    p = sub.add_parser("audit", help="compliance experiments")
    p.add_argument("test", choices=["accuracy", "caching", "alternate-seed"])
    _common(p)
    p.add_argument("--sampling-rate", type=float, default=0.05)
    p.add_argument("--reference-log", help="accuracy-mode run log to compare against")
    p.add_argument("--caching-threshold", type=float, default=0.10)
    p.add_argument("--duplicate-pool", type=int, default=8)
    p.add_argument(
        "--alternate-seed",
        action="append",
        default=[],
        help="SCHEDULE or SCHEDULE:SAMPLE; repeatable",
    )
    p.add_argument("--seed-tolerance", type=float, default=0.05)

    p = sub.add_parser("check", help="re-verify a stored run log")
    p.add_argument("log")
    p.add_argument("--output-dir", default=None, help="also write the result here")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("summarize", help="table of stored results")
    p.add_argument("results", nargs="*")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def settings_from_args(args: argparse.Namespace) -> TestSettings:
    data = load_settings(args.config).to_dict() if args.config else {}
    for name in _SETTING_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            data[name] = v
    if args.seed is not None:
        data["schedule_seed"] = data["sample_seed"] = args.seed
    if args.virtual_clock:
        data["clock"] = ClockMode.VIRTUAL.value
    if "scenario" not in data:
        raise UsageError("--scenario is required (flag or config)")
    registry = profile_registry(load_profiles(args.profiles)) if args.profiles else None
    return validate_settings(TestSettings.from_dict(data), registry)


def _make_sut(args, settings: TestSettings):
    if args.sim_config and args.sut_command:
        raise UsageError("--sim-config and --sut-command are mutually exclusive")
    if args.sut_command:
        if settings.clock is ClockMode.VIRTUAL:
            raise UsageError("an external SUT needs --clock wall")
        return SubprocessSut(shlex.split(args.sut_command)), None
    cfg = SimConfig()
    if args.sim_config:
        cfg = SimConfig.from_dict(json.loads(Path(args.sim_config).read_text()))
    clock = make_clock(settings.clock)
    return SimulatedSut(cfg, clock), clock


def _library(args, settings: TestSettings) -> InMemoryLibrary:
    return InMemoryLibrary(args.library_size or settings.performance_sample_count)


def _out(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _close(sut) -> None:
    if isinstance(sut, SubprocessSut):
        sut.close()


def _print_result(r: RunResult) -> None:
    sys.stdout.write(summarize([r]))


def cmd_run(args) -> int:
    settings = settings_from_args(args)
    sut, clock = _make_sut(args, settings)
    try:
        lg = run(sut, _library(args, settings), settings, clock)
    finally:
        _close(sut)
    out = _out(args)
    result = check_validity(lg)
    write_log(lg, out / "run_log.jsonl")
    write_log(result, out / "run_result.jsonl")
    _print_result(result)
    return EXIT_OK if result.valid else EXIT_INVALID


def cmd_official_server(args) -> int:
    settings = settings_from_args(args)
    sut, clock = _make_sut(args, settings)
    try:
        res = run_server_official(sut, _library(args, settings), settings, clock)
    finally:
        _close(sut)
    out = _out(args)
    for k, (lg, r) in enumerate(zip(res.logs, res.results)):
        write_log(lg, out / f"server_run{k}_log.jsonl")
        write_log(r, out / f"server_run{k}_result.jsonl")
    write_log(res.selected, out / "run_result.jsonl")
    _print_result(res.selected)
    return EXIT_OK if res.selected.valid else EXIT_INVALID


def cmd_search_qps(args) -> int:
    if args.target_qps is None:
        args.target_qps = args.lo
    settings = settings_from_args(args)
    sut, clock = _make_sut(args, settings)
    trace: list = []
    try:
        rate = find_max_qps(
            sut, _library(args, settings), settings, args.lo, args.hi, args.resolution, clock, trace
        )
    except NoValidRateError as exc:
        print(str(exc))
        return EXIT_INVALID
    finally:
        _close(sut)
    _write_trace(args, "search_qps.json", trace, rate)
    print(f"max_qps {rate:.6g}")
    return EXIT_OK


def cmd_search_streams(args) -> int:
    settings = settings_from_args(args)
    sut, clock = _make_sut(args, settings)
    trace: list = []
    try:
        n = find_max_streams(sut, _library(args, settings), settings, args.max_n, clock, trace)
    except NoValidRateError as exc:
        print(str(exc))
        return EXIT_INVALID
    finally:
        _close(sut)
    _write_trace(args, "search_streams.json", trace, n)
    print(f"max_streams {n}")
    return EXIT_OK


def _write_trace(args, name: str, trace, best) -> None:
    doc = {"best": best, "trials": [{"value": v, "valid": ok} for v, ok in trace]}
    (_out(args) / name).write_text(json.dumps(doc, indent=2) + "\n")


def _parse_seed(text: str):
    if ":" in text:
        a, b = text.split(":", 1)
        return (_int_any(a), _int_any(b))
    return _int_any(text)


def cmd_audit(args) -> int:
    settings = settings_from_args(args)
    sut, clock = _make_sut(args, settings)
    lib = _library(args, settings)
    try:
        if args.test == "accuracy":
            ref = None
            if args.reference_log:
                ref = read_log(args.reference_log)
                if not isinstance(ref, RunLog):
                    raise UsageError("--reference-log must hold a run log")
            report = audit_accuracy_verification(sut, lib, settings, args.sampling_rate, ref)
        elif args.test == "caching":
            report = audit_caching(sut, lib, settings, args.caching_threshold, args.duplicate_pool)
        else:
            if not args.alternate_seed:
                raise UsageError("alternate-seed audit needs at least one --alternate-seed")
            seeds = [_parse_seed(s) for s in args.alternate_seed]
            report = audit_alternate_seed(sut, lib, settings, seeds, args.seed_tolerance)
    finally:
        _close(sut)
    out = _out(args)
    write_log(report, out / f"audit_{report.test_name}.jsonl")
    for k, lg in enumerate(report.runs):
        write_log(lg, out / f"audit_{report.test_name}_run{k}.jsonl")
    print(f"{report.test_name}: {report.verdict.value.upper()}")
    for key, value in report.evidence.items():
        print(f"  {key}: {value}")
    return EXIT_OK if report.verdict is Verdict.PASS else EXIT_INVALID


def cmd_check(args) -> int:
    obj = read_log(args.log)
    if not isinstance(obj, RunLog):
        raise UsageError(f"{args.log} does not hold a run log")
    result = check_validity(obj)
    if args.output_dir:
        write_log(result, _out(args) / "run_result.jsonl")
    _print_result(result)
    return EXIT_OK if result.valid else EXIT_INVALID


def cmd_summarize(args) -> int:
    results = []
    for path in args.results:
        obj = read_log(path)
        if not isinstance(obj, RunResult):
            raise UsageError(f"{path} does not hold a run result")
        results.append(obj)
    sys.stdout.write(summarize(results, args.format))
    if args.format == "json":
        sys.stdout.write("\n")
    return EXIT_OK if all(r.valid for r in results) else EXIT_INVALID


_VERBS = {
    "run": cmd_run,
    "official-server": cmd_official_server,
    "search-qps": cmd_search_qps,
    "search-streams": cmd_search_streams,
    "audit": cmd_audit,
    "check": cmd_check,
    "summarize": cmd_summarize,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return _VERBS[args.verb](args)
    except (UsageError, SettingsError, LogFormatError, AuditError) as exc:
        print(f"loadbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HarnessError as exc:
        print(f"loadbench: run failed: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        print(f"loadbench: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
