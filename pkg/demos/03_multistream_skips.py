"""
When a multistream query overruns its slot
==========================================

Queries go out on a fixed grid. If one is still running when the next slot
arrives, that slot is skipped and the grid shifts. This replays the classic
case of a 120 ms query on a 50 ms grid.
"""

from loadbench import InMemoryLibrary, Query, QueryResponse, Scenario, SystemUnderTest, TestSettings, VirtualClock
from loadbench import run_performance


class Scripted(SystemUnderTest):
    """Answers each query after the next scripted service time."""

    def __init__(self, clock, service_ms):
        self.clock = clock
        self.service = [int(ms * 1e6) for ms in service_ms]
        self.k = 0

    def start_run(self, settings, complete) -> None:
        self.complete = complete

    def issue_query(self, query: Query) -> None:
        svc = self.service[self.k]
        self.k += 1
        answer = QueryResponse(query.query_id, [0] * len(query.sample_indices))
        self.clock.call_at(self.clock.now() + svc, self.complete, answer)


clock = VirtualClock()
sut = Scripted(clock, [120, 10, 70, 10])
s = TestSettings(Scenario.MULTI_STREAM, min_query_count=4, min_duration=0, performance_sample_count=16)
lg = run_performance(sut, InMemoryLibrary(16), s)

for i in range(lg.query_count):
    print(f"query {i}: scheduled {lg.scheduled_ns[i] / 1e6:5.0f} ms  issued {lg.issue_ns[i] / 1e6:5.0f} ms"
          f"  done {lg.completion_ns[i] / 1e6:5.0f} ms  caused {lg.skips[i]} skip(s)")
print("skipped intervals:", lg.skipped_intervals, " queries that caused skips:", lg.queries_with_skips)
