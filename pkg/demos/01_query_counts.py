"""
How many queries a tail-latency claim needs
===========================================

A 90th- or 99th-percentile latency is only trustworthy if enough queries
were measured. This walks through the count for each tail percentile and
shows what the built-in profiles require per scenario.
"""

from loadbench import ConfidenceSpec, Scenario, builtin_profiles, min_query_count, percentile

# the count grows quickly as the tail gets thinner
for tail in (0.90, 0.95, 0.97, 0.99):
    spec = ConfidenceSpec(tail, 0.99)
    q = min_query_count(spec)
    print(f"tail {tail:.2f}: margin {spec.margin:.5f}  raw {q.raw:>7,}  rounded {q.rounded:>7,}")

# the rounded counts end up in every profile
print()
for p in builtin_profiles():
    mq = p.min_queries
    print(f"{p.task_name:28s} single {mq[Scenario.SINGLE_STREAM]:>6,}  multi {mq[Scenario.MULTI_STREAM]:>7,}"
          f"  server {mq[Scenario.SERVER]:>7,}  offline 1 x {p.offline_min_samples:,}")

# nearest-rank percentiles always return a measured value
lat = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3]
print()
print("p50", percentile(lat, 0.5), " p90", percentile(lat, 0.9), " p99", percentile(lat, 0.99))
