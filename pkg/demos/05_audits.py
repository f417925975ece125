"""
Catching systems that game the benchmark
========================================

Three audits, each run against an honest simulator and one built to cheat.
"""

from loadbench import InMemoryLibrary, Scenario, SimConfig, SimulatedSut, TestSettings, VirtualClock
from loadbench import audit_accuracy_verification, audit_alternate_seed, audit_caching
from loadbench.sim import keyed_to_schedule


def sut(config):
    return SimulatedSut(config, VirtualClock())


def show(label, report):
    keys = ", ".join(f"{k}={v:.4g}" for k, v in report.evidence.items() if isinstance(v, float))
    print(f"  {label:8s} {report.verdict.value:12s} {keys}")


# caching: the same work on distinct samples vs a pool of 8 repeated samples
single = TestSettings(Scenario.SINGLE_STREAM, min_query_count=1024, min_duration=0)
print("caching")
show("honest", audit_caching(sut(SimConfig(base_latency_per_sample=0.002)), InMemoryLibrary(2048), single))
show("cheater", audit_caching(sut(SimConfig(base_latency_per_sample=0.002, caching_enabled=True,
                                            cache_hit_latency=0.0001)), InMemoryLibrary(2048), single))

# alternate seeds: a system tuned to the official arrival pattern
server = TestSettings(Scenario.SERVER, target_qps=100, min_query_count=4096, min_duration=0)
lib = InMemoryLibrary(1024)
print("alternate seed")
show("honest", audit_alternate_seed(sut(SimConfig(base_latency_per_sample=0.003)), lib, server, [1, 2]))
tuned = keyed_to_schedule(SimConfig(base_latency_per_sample=0.012), server, speedup=4.0)
show("cheater", audit_alternate_seed(sut(tuned), lib, server, [1, 2]))

# accuracy verification: answers in timed runs must match the accuracy run
print("accuracy verification")
show("honest", audit_accuracy_verification(sut(SimConfig()), lib, server, 0.05))
r = audit_accuracy_verification(sut(SimConfig(performance_error_rate=0.1)), lib, server, 0.05)
show("cheater", r)
print(f"           {r.evidence['mismatches']} of {r.evidence['samples_checked']} logged answers differ")
