"""
Logs, reruns and the command line
=================================

Runs are stored as JSON lines. The same settings on the virtual clock give the
same bytes, apart from the host-timing block, and the ``loadbench`` command
can re-check a stored log.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

from loadbench import InMemoryLibrary, Scenario, SimConfig, SimulatedSut, TestSettings, VirtualClock
from loadbench import read_log, run_performance, write_log
from loadbench.reporting import canonical_log_bytes

out = Path(tempfile.mkdtemp())
s = TestSettings(Scenario.SERVER, target_qps=150, min_query_count=5000, min_duration=0, accuracy_log_probability=0.01)
paths = []
for k in range(2):
    lg = run_performance(SimulatedSut(SimConfig(base_latency_per_sample=0.002, jitter=0.0005, seed=4), VirtualClock()),
                         InMemoryLibrary(1024), s)
    paths.append(write_log(lg, out / f"run{k}.jsonl"))

print("first lines of", paths[0].name)
for line in paths[0].read_text().splitlines()[:3]:
    print("  ", line[:110] + ("..." if len(line) > 110 else ""))
print("identical apart from host timing:", canonical_log_bytes(paths[0]) == canonical_log_bytes(paths[1]))
print("round trip equal:", read_log(paths[0]) == read_log(paths[1]))

# the CLI re-derives the verdict from the log alone
cli = [sys.executable, "-m", "loadbench.cli"]
proc = subprocess.run(cli + ["check", str(paths[0]), "--output-dir", str(out)], capture_output=True, text=True)
print()
print(proc.stdout.strip())
print("exit code", proc.returncode)
