"""The boundary between the load generator and a system under test.

In-process SUTs subclass :class:`SystemUnderTest`. External SUTs written in
any language attach through :class:`SubprocessSut`, which speaks a
length-prefixed binary protocol over the child's stdin/stdout:

    frame    := u32 length (little endian) || body
    request  := u8 kind || ...
        kind 1 (query)    u64 query_id, u32 count, count x u64 sample index
        kind 2 (flush)
        kind 3 (shutdown)
    response := u8 kind=1, u64 query_id, u32 count, count x u64 digest

:func:`serve_stdio` implements the child side for Python SUTs.
"""

from __future__ import annotations

import abc
import struct
import subprocess
import sys
import threading
from typing import BinaryIO, Callable, Iterable, Sequence

from .scenario import Query, QueryResponse, TestSettings

Completion = Callable[[QueryResponse], None]

MSG_QUERY = 1
MSG_FLUSH = 2
MSG_SHUTDOWN = 3
MSG_RESPONSE = 1

_LEN = struct.Struct("<I")
_HEAD = struct.Struct("<BQI")


class ProtocolError(RuntimeError):
    pass


class SystemUnderTest(abc.ABC):
    """What the harness drives.

    ``start_run`` hands over the completion callback; every issued query
    must be answered through it exactly once, from any thread.
    """

    name: str = "sut"

    @abc.abstractmethod
    def start_run(self, settings: TestSettings, complete: Completion) -> None: ...

    @abc.abstractmethod
    def issue_query(self, query: Query) -> None: ...

    def flush(self) -> None:
        """Finish in-flight work without waiting for more queries."""


class SampleLibrary(abc.ABC):
    """Samples the SUT must have resident before timing starts."""

    total_samples: int

    @abc.abstractmethod
    def load_samples(self, indices: Sequence[int]) -> None: ...

    @abc.abstractmethod
    def unload_samples(self, indices: Sequence[int]) -> None: ...


class InMemoryLibrary(SampleLibrary):
    def __init__(self, total_samples: int):
        if total_samples < 1:
            raise ValueError("total_samples must be >= 1")
        self.total_samples = total_samples
        self.loaded: set[int] = set()
        self.load_calls = 0

    def load_samples(self, indices: Sequence[int]) -> None:
        self.load_calls += 1
        self.loaded.update(int(i) for i in indices)

    def unload_samples(self, indices: Sequence[int]) -> None:
        self.loaded.difference_update(int(i) for i in indices)


def encode_query(query_id: int, indices: Iterable[int]) -> bytes:
    idx = [int(i) for i in indices]
    body = _HEAD.pack(MSG_QUERY, query_id, len(idx)) + struct.pack(f"<{len(idx)}Q", *idx)
    return _LEN.pack(len(body)) + body


def encode_control(kind: int) -> bytes:
    return _LEN.pack(1) + bytes([kind])


def encode_response(query_id: int, digests: Iterable[int]) -> bytes:
    d = [int(x) for x in digests]
    body = _HEAD.pack(MSG_RESPONSE, query_id, len(d)) + struct.pack(f"<{len(d)}Q", *d)
    return _LEN.pack(len(body)) + body


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if buf:
                raise ProtocolError("truncated frame")
            return None
        buf += chunk
    return bytes(buf)


def read_frame(stream: BinaryIO) -> tuple[int, int, tuple[int, ...]] | None:
    """Next frame as (kind, query_id, values); None at clean end of stream."""
    head = _read_exact(stream, _LEN.size)
    if head is None:
        return None
    (length,) = _LEN.unpack(head)
    body = _read_exact(stream, length)
    if body is None or len(body) < 1:
        raise ProtocolError("empty frame")
    kind = body[0]
    if length == 1:
        return kind, 0, ()
    if length < _HEAD.size:
        raise ProtocolError(f"short frame of {length} bytes")
    kind, qid, count = _HEAD.unpack_from(body)
    if length != _HEAD.size + 8 * count:
        raise ProtocolError(f"frame length {length} does not match count {count}")
    values = struct.unpack_from(f"<{count}Q", body, _HEAD.size)
    return kind, qid, values


class SubprocessSut(SystemUnderTest):
    """A SUT living in a child process, spoken to over pipes."""

    def __init__(self, argv: Sequence[str], name: str | None = None):
        self.name = name or " ".join(argv)
        self._proc = subprocess.Popen(
            list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )
        self._complete: Completion | None = None
        self._write_lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self.error: Exception | None = None
        self._reader.start()

    def start_run(self, settings: TestSettings, complete: Completion) -> None:
        self._complete = complete

    def _send(self, data: bytes) -> None:
        with self._write_lock:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()

    def issue_query(self, query: Query) -> None:
        self._send(encode_query(query.query_id, query.sample_indices))

    def flush(self) -> None:
        self._send(encode_control(MSG_FLUSH))

    def _read_loop(self) -> None:
        try:
            while True:
                frame = read_frame(self._proc.stdout)
                if frame is None:
                    return
                kind, qid, digests = frame
                if kind != MSG_RESPONSE:
                    raise ProtocolError(f"unexpected frame kind {kind}")
                if self._complete is not None:
                    self._complete(QueryResponse(qid, digests))
        except Exception as exc:  # surfaced to the harness via watchdog
            self.error = exc

    def close(self, timeout: float = 5.0) -> int:
        try:
            self._send(encode_control(MSG_SHUTDOWN))
            self._proc.stdin.close()
        except (BrokenPipeError, OSError):
            pass
        try:
            return self._proc.wait(timeout)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            return self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_stdio(
    handler: Callable[[int, tuple[int, ...]], Sequence[int]],
    stdin: BinaryIO | None = None,
    stdout: BinaryIO | None = None,
) -> None:
    """Child-side loop: answer each query frame with ``handler(id, indices)``."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    while True:
        frame = read_frame(stdin)
        if frame is None:
            return
        kind, qid, indices = frame
        if kind == MSG_SHUTDOWN:
            return
        if kind == MSG_FLUSH:
            continue
        if kind != MSG_QUERY:
            raise ProtocolError(f"unexpected frame kind {kind}")
        stdout.write(encode_response(qid, handler(qid, indices)))
        stdout.flush()
