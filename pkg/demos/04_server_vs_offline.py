"""
Why a latency bound costs throughput
====================================

Offline mode hands over every sample at once, so a batching accelerator
always runs full batches. Under Poisson arrivals and a 15 ms bound it has to
answer before batches fill. The gap depends on how much batching helps.
"""

from dataclasses import replace

from loadbench import InMemoryLibrary, Scenario, SimConfig, SimulatedSut, TestSettings, VirtualClock
from loadbench import check_validity, find_max_qps, profile, run_performance

lib = InMemoryLibrary(1024)


def offline_rate(config, prof, expected):
    s = TestSettings(Scenario.OFFLINE, profile=prof, offline_expected_qps=expected)
    return check_validity(run_performance(SimulatedSut(config, VirtualClock()), lib, s)).metric_value


# batching halves the per-sample cost: big batches matter
lossy = SimConfig(base_latency_per_sample=0.001, max_batch=8, batch_efficiency=0.5)
off = offline_rate(lossy, "image-classification-heavy", 2000)
trace = []
qps = find_max_qps(SimulatedSut(lossy, VirtualClock()), lib, TestSettings(Scenario.SERVER, target_qps=1),
                   500, 2000, 50, trace=trace)
print(f"batch-hungry: offline {off:7.1f} samples/s  server {qps:7.1f} QPS  ({1 - qps / off:.1%} lost)")
print("  search:", ", ".join(f"{r:.0f}{'+' if v else '-'}" for r, v in trace))

# no batching benefit and a bound far above the service time: almost no loss
flat = replace(lossy, batch_efficiency=1.0)
wide = replace(profile("image-classification-heavy"), task_name="wide-bound", server_qos_bound=1.0)
off = offline_rate(flat, wide, 1200)
qps = find_max_qps(SimulatedSut(flat, VirtualClock()), lib, TestSettings(Scenario.SERVER, profile=wide, target_qps=1),
                   800, 1100, 25)
print(f"batch-neutral: offline {off:7.1f} samples/s  server {qps:7.1f} QPS  ({1 - qps / off:.1%} lost)")
