"""Time sources shared by the harness and SUTs.

All times are integer nanoseconds since the start of the current run.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable

from .scenario import ClockMode


class VirtualClock:
    """Discrete-event clock; time moves only when events are processed."""

    mode = ClockMode.VIRTUAL

    def __init__(self):
        self._now = 0
        self._heap: list = []
        self._seq = itertools.count()

    def start_run(self) -> None:
        self._heap.clear()
        self._now = 0

    def now(self) -> int:
        return self._now

    def call_at(self, t_ns: int, fn: Callable, *args) -> None:
        if t_ns < self._now:
            t_ns = self._now
        heapq.heappush(self._heap, (t_ns, next(self._seq), fn, args))

    def wait_until(self, t_ns: int) -> None:
        """Process every event due at or before ``t_ns``, then sit at ``t_ns``."""
        heap = self._heap
        while heap and heap[0][0] <= t_ns:
            t, _, fn, args = heapq.heappop(heap)
            self._now = t
            fn(*args)
        if t_ns > self._now:
            self._now = t_ns

    def run_until(self, done: Callable[[], bool], deadline_ns: int) -> bool:
        """Process events until ``done()``; False if the deadline passes first."""
        heap = self._heap
        while not done():
            if not heap or heap[0][0] > deadline_ns:
                self._now = max(self._now, deadline_ns)
                return False
            t, _, fn, args = heapq.heappop(heap)
            self._now = t
            fn(*args)
        return True

    def notify(self) -> None:
        pass

    def pending(self) -> int:
        return len(self._heap)


class WallClock:
    """Monotonic host clock with a timer thread for ``call_at`` callbacks."""

    mode = ClockMode.WALL

    def __init__(self):
        self._t0 = time.monotonic_ns()
        self._cond = threading.Condition()
        self._timers: list = []
        self._seq = itertools.count()
        self._thread: threading.Thread | None = None
        self._closed = False

    def start_run(self) -> None:
        with self._cond:
            self._timers.clear()
        self._t0 = time.monotonic_ns()

    def now(self) -> int:
        return time.monotonic_ns() - self._t0

    def call_at(self, t_ns: int, fn: Callable, *args) -> None:
        with self._cond:
            heapq.heappush(self._timers, (t_ns, next(self._seq), fn, args))
            if self._thread is None:
                self._thread = threading.Thread(
                    target=self._timer_loop, name="loadbench-timer", daemon=True
                )
                self._thread.start()
            self._cond.notify_all()

    def _timer_loop(self) -> None:
        while True:
            with self._cond:
                while not self._closed:
                    if self._timers:
                        delay = self._timers[0][0] - self.now()
                        if delay <= 0:
                            break
                        self._cond.wait(delay / 1e9)
                    else:
                        self._cond.wait()
                if self._closed:
                    return
                _, _, fn, args = heapq.heappop(self._timers)
            fn(*args)

    def wait_until(self, t_ns: int) -> None:
        while True:
            delay = t_ns - self.now()
            if delay <= 0:
                return
            time.sleep(delay / 1e9)

    def run_until(self, done: Callable[[], bool], deadline_ns: int) -> bool:
        with self._cond:
            while not done():
                left = deadline_ns - self.now()
                if left <= 0:
                    return False
                self._cond.wait(min(left / 1e9, 0.05))
        return True

    def notify(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


def make_clock(mode: ClockMode | str) -> VirtualClock | WallClock:
    return VirtualClock() if ClockMode(mode) is ClockMode.VIRTUAL else WallClock()
