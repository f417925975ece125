"""
The four traffic patterns against one simulated accelerator
===========================================================

One simulated system, four scenarios. Everything runs on the virtual clock,
so a full 270,336-query server run takes a second or two of host time.
"""

from loadbench import (
    InMemoryLibrary,
    Scenario,
    SimConfig,
    SimulatedSut,
    TestSettings,
    VirtualClock,
    check_validity,
    run_performance,
    summarize,
)

# 2 ms per sample, batches of up to 8 at 70% efficiency
config = SimConfig(base_latency_per_sample=0.002, max_batch=8, batch_efficiency=0.7, jitter=0.0002, seed=1)
lib = InMemoryLibrary(1024)

settings = [
    TestSettings(Scenario.SINGLE_STREAM),
    TestSettings(Scenario.MULTI_STREAM, samples_per_query=8),
    TestSettings(Scenario.SERVER, target_qps=400),
    TestSettings(Scenario.OFFLINE, offline_expected_qps=700),
]

results = []
for s in settings:
    lg = run_performance(SimulatedSut(config, VirtualClock()), lib, s)
    r = check_validity(lg)
    results.append(r)
    print(f"{s.scenario.value:13s} {lg.query_count:>7,} queries over {lg.duration_ns / 1e9:6.1f} virtual s")

print()
print(summarize(results))

# past capacity the queue grows without limit and the watchdog ends the run
r = check_validity(run_performance(SimulatedSut(config, VirtualClock()), lib,
                                   TestSettings(Scenario.SERVER, target_qps=700)))
print()
print("server at 700 QPS:", "VALID" if r.valid else r.violations[0])
