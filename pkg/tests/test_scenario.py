import json
from dataclasses import replace

import pytest

from loadbench.scenario import (
    BenchmarkProfile,
    ClockMode,
    QueryResponse,
    Scenario,
    SettingsError,
    TestMode,
    TestSettings,
    builtin_profiles,
    combine_digests,
    default_watchdog,
    load_profiles,
    load_settings,
    profile,
    profile_registry,
    seconds_to_ns,
    validate_settings,
)

VISION = ["image-classification-heavy", "image-classification-light", "object-detection-heavy", "object-detection-light"]


def test_five_builtin_profiles():
    names = [p.task_name for p in builtin_profiles()]
    assert sorted(names) == sorted(VISION + ["machine-translation"])


def test_vision_heavy_constants():
    p = profile("image-classification-heavy")
    assert p.server_qos_bound == 0.015
    assert p.multistream_arrival_interval == 0.05
    assert p.accuracy_reference == 76.456
    assert p.accuracy_target_fraction == 0.99
    assert p.tail_percentile == 0.99
    assert p.server_overtime_max == 0.01


def test_translation_constants():
    p = profile("machine-translation")
    assert p.server_overtime_max == 0.03
    assert p.tail_percentile == 0.97
    assert p.server_qos_bound == 0.25
    assert p.multistream_arrival_interval == 0.1


def test_light_classifier_target():
    p = profile("image-classification-light")
    assert (p.accuracy_reference, p.accuracy_target_fraction) == (71.676, 0.98)


def test_heavy_detector_interval():
    assert profile("object-detection-heavy").multistream_arrival_interval == 0.066


@pytest.mark.parametrize("name", VISION)
def test_vision_min_queries(name):
    mq = profile(name).min_queries
    assert mq[Scenario.SINGLE_STREAM] == 1024
    assert mq[Scenario.MULTI_STREAM] == 270336
    assert mq[Scenario.SERVER] == 270336
    assert mq[Scenario.OFFLINE] == 1
    assert profile(name).offline_min_samples == 24576


def test_translation_min_queries():
    mq = profile("machine-translation").min_queries
    assert mq[Scenario.SERVER] == mq[Scenario.MULTI_STREAM] == 90112


def test_profiles_round_trip():
    for p in builtin_profiles():
        again = BenchmarkProfile.from_dict(json.loads(json.dumps(p.to_dict())))
        assert again == p


def test_profile_rejects_unknown_keys_and_bad_values():
    d = profile("image-classification-heavy").to_dict()
    with pytest.raises(SettingsError):
        BenchmarkProfile.from_dict({**d, "surprise": 1})
    with pytest.raises(SettingsError):
        BenchmarkProfile.from_dict({**d, "tail_percentile": 1.5})
    bad = dict(d)
    bad["min_queries"] = {"server": 10}
    with pytest.raises(SettingsError):
        BenchmarkProfile.from_dict(bad)


def test_unknown_profile_name():
    with pytest.raises(SettingsError, match="unknown profile"):
        profile("no-such-task")


def test_extra_profiles_from_file(tmp_path):
    base = profile("image-classification-heavy").to_dict()
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps({**base, "task_name": "custom", "server_qos_bound": 0.5}) + "\n")
    extra = load_profiles(path)
    reg = profile_registry(extra)
    s = validate_settings(TestSettings(Scenario.SERVER, profile="custom", target_qps=5), reg)
    assert s.bench_profile.server_qos_bound == 0.5


def test_server_requires_target_qps():
    with pytest.raises(SettingsError) as ei:
        validate_settings(TestSettings(Scenario.SERVER))
    assert "target_qps required" in ei.value.errors


def test_errors_are_collected():
    s = TestSettings(
        Scenario.SINGLE_STREAM,
        target_qps=5,
        performance_sample_count=0,
        accuracy_log_probability=2.0,
    )
    with pytest.raises(SettingsError) as ei:
        validate_settings(s)
    assert len(ei.value.errors) == 3


@pytest.mark.parametrize(
    "kw",
    [
        dict(scenario=Scenario.SERVER, target_qps=-1.0),
        dict(scenario=Scenario.MULTI_STREAM, samples_per_query=0),
        dict(scenario=Scenario.OFFLINE, samples_per_query=4),
        dict(scenario=Scenario.SERVER, target_qps=1, offline_expected_qps=5),
        dict(scenario=Scenario.OFFLINE, offline_expected_qps=0),
        dict(scenario=Scenario.OFFLINE, min_duration=-1),
        dict(scenario=Scenario.OFFLINE, min_query_count=0),
        dict(scenario=Scenario.OFFLINE, watchdog_timeout=0),
        dict(scenario=Scenario.OFFLINE, schedule_seed=-1),
        dict(scenario=Scenario.OFFLINE, sample_seed=2**64),
    ],
)
def test_rejected_settings(kw):
    with pytest.raises(SettingsError):
        validate_settings(TestSettings(**kw))


def test_defaults_filled():
    s = validate_settings(TestSettings(Scenario.SINGLE_STREAM))
    assert s.min_query_count == 1024
    assert s.min_duration == 60.0
    assert s.is_official
    m = validate_settings(TestSettings(Scenario.MULTI_STREAM))
    assert m.min_query_count == 270336 and m.samples_per_query == 1
    t = validate_settings(TestSettings(Scenario.SERVER, profile="machine-translation", target_qps=10))
    assert t.min_query_count == 90112


def test_validation_is_idempotent():
    s = validate_settings(TestSettings(Scenario.SERVER, target_qps=10))
    assert validate_settings(s) == s


def test_not_official_when_shortened():
    s = validate_settings(TestSettings(Scenario.SINGLE_STREAM, min_duration=1.0))
    assert not s.is_official


def test_default_watchdogs():
    s = validate_settings(TestSettings(Scenario.SERVER, target_qps=1))
    assert s.watchdog_timeout == pytest.approx(0.15)
    m = validate_settings(TestSettings(Scenario.MULTI_STREAM))
    assert m.watchdog_timeout == pytest.approx(0.5)
    o = validate_settings(TestSettings(Scenario.OFFLINE))
    assert default_watchdog(o) == 600.0


def test_unvalidated_profile_access_raises():
    with pytest.raises(SettingsError):
        TestSettings(Scenario.OFFLINE).bench_profile


def test_settings_round_trip(tmp_path):
    s = validate_settings(TestSettings(Scenario.MULTI_STREAM, samples_per_query=4, clock=ClockMode.WALL))
    d = json.loads(json.dumps(s.to_dict()))
    assert TestSettings.from_dict(d) == s
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"scenario": "server", "target_qps": 12.5, "mode": "accuracy"}))
    loaded = load_settings(path)
    assert loaded.scenario is Scenario.SERVER and loaded.mode is TestMode.ACCURACY


def test_settings_reject_unknown_keys():
    with pytest.raises(SettingsError):
        TestSettings.from_dict({"scenario": "server", "bogus": 1})
    with pytest.raises(SettingsError):
        TestSettings.from_dict({"scenario": "nope"})


def test_combined_digest():
    r = QueryResponse(3, (1, 2, 3))
    assert r.payload_digest == combine_digests([1, 2, 3])
    assert QueryResponse(3, (3, 2, 1)).payload_digest != r.payload_digest


def test_seconds_to_ns():
    assert seconds_to_ns(0.015) == 15_000_000
    assert seconds_to_ns(0.066) == 66_000_000


def test_profile_is_frozen():
    p = profile("image-classification-heavy")
    with pytest.raises(Exception):
        p.server_qos_bound = 1.0
    q = replace(p, server_qos_bound=0.02)
    assert q.min_queries[Scenario.SERVER] == 270336
