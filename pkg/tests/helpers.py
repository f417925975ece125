"""Small scripted SUTs for harness tests."""

from loadbench.scenario import QueryResponse
from loadbench.sut import SystemUnderTest


class TraceSut(SystemUnderTest):
    """Completes query ``i`` exactly ``service_ns[i]`` after it is issued."""

    name = "trace"

    def __init__(self, clock, service_ns, default_ns=1_000_000):
        self.clock = clock
        self.service_ns = list(service_ns)
        self.default_ns = default_ns
        self.in_flight = 0
        self.max_in_flight = 0
        self.issued = []

    def start_run(self, settings, complete):
        self.complete = complete
        self.in_flight = self.max_in_flight = 0
        self.issued = []

    def issue_query(self, query):
        self.issued.append((query.query_id, self.clock.now()))
        self.in_flight += 1
        self.max_in_flight = max(self.max_in_flight, self.in_flight)
        qid = query.query_id
        svc = self.service_ns[qid] if qid < len(self.service_ns) else self.default_ns
        self.clock.call_at(self.clock.now() + svc, self._done, query)

    def _done(self, query):
        self.in_flight -= 1
        self.complete(QueryResponse(query.query_id, tuple(int(i) for i in query.sample_indices)))


class SilentSut(SystemUnderTest):
    """Accepts queries and never answers."""

    def __init__(self, clock):
        self.clock = clock

    def start_run(self, settings, complete):
        pass

    def issue_query(self, query):
        pass


class WrongIdSut(TraceSut):
    def _done(self, query):
        self.complete(QueryResponse(query.query_id + 1000))


class DoubleSut(TraceSut):
    def _done(self, query):
        self.complete(QueryResponse(query.query_id))
        self.complete(QueryResponse(query.query_id))
