"""Append-only record of one run."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .scenario import TestSettings


@dataclass
class RunLog:
    """Per-query timing for one run, indexed by query id.

    Times are integer nanoseconds from the run's start. ``completion_ns`` is
    -1 for queries that never completed (aborted runs). ``logged`` maps a
    query id to ``(sample_indices, digests)`` for queries whose payload was
    kept: all of them in accuracy mode, a seeded random subset otherwise.
    ``wall`` holds host-clock facts and is excluded from determinism checks.
    """

    settings: TestSettings
    scheduled_ns: np.ndarray
    issue_ns: np.ndarray
    completion_ns: np.ndarray
    sample_counts: np.ndarray
    skips: np.ndarray
    end_ns: int
    logged: dict[int, tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=dict)
    aborted: str | None = None
    wall: dict[str, Any] = field(default_factory=dict)

    @property
    def query_count(self) -> int:
        return int(self.issue_ns.size)

    @property
    def completed_count(self) -> int:
        return int(np.count_nonzero(self.completion_ns >= 0))

    @property
    def sample_count(self) -> int:
        return int(self.sample_counts.sum())

    @property
    def latencies_ns(self) -> np.ndarray:
        done = self.completion_ns >= 0
        return (self.completion_ns - self.issue_ns)[done]

    @property
    def duration_ns(self) -> int:
        return self.end_ns

    @property
    def skipped_intervals(self) -> int:
        return int(self.skips.sum())

    @property
    def queries_with_skips(self) -> int:
        return int(np.count_nonzero(self.skips))

    def sample_digests(self) -> dict[int, list[int]]:
        """Logged digests grouped by sample index."""
        out: dict[int, list[int]] = {}
        for qid in sorted(self.logged):
            idx, dig = self.logged[qid]
            for i, d in zip(idx, dig):
                out.setdefault(int(i), []).append(int(d))
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunLog):
            return NotImplemented
        arrays = ("scheduled_ns", "issue_ns", "completion_ns", "sample_counts", "skips")
        return (
            self.settings == other.settings
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
            and self.end_ns == other.end_ns
            and self.logged == other.logged
            and self.aborted == other.aborted
        )

    __hash__ = None
