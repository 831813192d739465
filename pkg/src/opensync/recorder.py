"""Session recorder: resolve streams, pull them, and write one XDF file.

Each attached stream gets an ingest thread that pulls samples into a chunk
buffer and flushes it to the shared file writer once the buffer has been
filling for the threshold time (default 500 ms). Clock offsets are written
every 5 s per stream and boundary chunks every 10 s. Raw producer
timestamps are stored; clock correction is applied at load time.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

from .clocksync import local_clock
from .errors import ConnectionLost, IoFailure, NoMeasurements
from .protocol import ResolveQuery, StreamInfo
from .streaming import Inlet, create_inlet, resolve_streams
from .xdf import XdfWriter

log = logging.getLogger("opensync.recorder")

DEFAULT_CHUNK_THRESHOLD = 0.5
OFFSET_INTERVAL = 5.0
BOUNDARY_INTERVAL = 10.0
_PULL_MAX = 4096


@dataclass
class ChunkBuffer:
    """Samples accumulating toward one file chunk.

    t0 is the recorder-clock time at which the first sample of the chunk
    arrived; the buffer is flushed once now - t0 reaches the threshold.
    """

    samples: list = field(default_factory=list)
    t0: float | None = None

    @property
    def n(self) -> int:
        return len(self.samples)

    def add(self, samples, now: float) -> None:
        if not self.samples:
            self.t0 = now
        self.samples.extend(samples)

    def reset(self) -> None:
        self.samples = []
        self.t0 = None


@dataclass
class _StreamState:
    stream_id: int
    inlet: Inlet
    chunk: ChunkBuffer = field(default_factory=ChunkBuffer)
    sample_count: int = 0
    dropped_count: int = 0
    first_ts: float | None = None
    last_ts: float | None = None
    chunk_log: list = field(default_factory=list)  # (n, elapsed) per flush
    finalized: bool = False
    next_offset_at: float = 0.0
    thread: threading.Thread | None = None


class RecordingSession:
    """Owns the output file and one ingest thread per attached stream."""

    def __init__(self, path, infos, *, t_th: float = DEFAULT_CHUNK_THRESHOLD,
                 discovery_port: int | None = None, poll_interval: float = 0.02,
                 clock=local_clock):
        self.path = path
        self.t_th = t_th
        self.state = "created"
        self._poll = poll_interval
        self._clock = clock
        self._stop = threading.Event()
        self._summary: dict | None = None
        self._boundary_lock = threading.Lock()
        self._next_boundary = clock() + BOUNDARY_INTERVAL

        try:
            self._sink = open(path, "wb")
        except OSError as exc:
            raise IoFailure(f"cannot open {path!r} for writing: {exc}") from exc
        self._writer = XdfWriter(self._sink)
        self._writer.write_file_header()

        self.streams: list[_StreamState] = []
        try:
            for index, info in enumerate(infos, start=1):
                inlet = create_inlet(info, discovery_port=discovery_port,
                                     clock=clock)
                self._writer.write_stream_header(index, inlet.info)
                inlet.start_clock_sync(OFFSET_INTERVAL)
                self.streams.append(_StreamState(stream_id=index, inlet=inlet))
        except Exception:
            for state in self.streams:
                state.inlet.close()
            self._sink.close()
            raise

        if not self.streams:
            log.warning("recording %s with zero streams (header-only file)", path)
        for state in self.streams:
            state.thread = threading.Thread(
                target=self._ingest_loop, args=(state,), daemon=True,
                name=f"ingest-{state.inlet.info.name}")
            state.thread.start()
        self.state = "running"

    # -- ingest --------------------------------------------------------------

    def _ingest_loop(self, state: _StreamState) -> None:
        lost = False
        while not self._stop.is_set():
            try:
                samples = state.inlet.pull_chunk(_PULL_MAX, timeout=self._poll)
            except ConnectionLost:
                lost = True
                break
            now = self._clock()
            if samples:
                self._account(state, samples, now)
            if state.chunk.n and now - state.chunk.t0 >= self.t_th:
                self._flush(state, now)
            self._maybe_clock_offset(state, now)
            self._maybe_boundary(now)
        if not lost:
            # Scoop anything still buffered at stop time.
            while True:
                try:
                    samples = state.inlet.pull_chunk(_PULL_MAX, timeout=0.0)
                except ConnectionLost:
                    break
                if not samples:
                    break
                self._account(state, samples, self._clock())
        self._finalize(state)
        if lost:
            log.warning("stream %s: connection lost, finalized early",
                        state.inlet.info.name)

    def _account(self, state: _StreamState, samples, now: float) -> None:
        if state.last_ts is not None and samples[0].timestamp < state.last_ts:
            log.warning("stream %s: non-monotonic timestamps",
                        state.inlet.info.name)
        state.chunk.add(samples, now)
        state.sample_count += len(samples)
        if state.first_ts is None:
            state.first_ts = samples[0].timestamp
        state.last_ts = samples[-1].timestamp

    def _flush(self, state: _StreamState, now: float) -> None:
        info = state.inlet.info
        elapsed = now - state.chunk.t0
        self._writer.write_samples(state.stream_id, state.chunk.samples,
                                   info.channel_format, info.nominal_srate)
        state.chunk_log.append((state.chunk.n, elapsed))
        state.chunk.reset()

    def _maybe_clock_offset(self, state: _StreamState, now: float) -> None:
        if now < state.next_offset_at:
            return
        try:
            collection_time, correction = state.inlet.correction_snapshot()
        except NoMeasurements:
            return
        self._writer.write_clock_offset(state.stream_id, collection_time,
                                        correction)
        state.next_offset_at = now + OFFSET_INTERVAL

    def _maybe_boundary(self, now: float) -> None:
        with self._boundary_lock:
            if now < self._next_boundary:
                return
            self._next_boundary = now + BOUNDARY_INTERVAL
        self._writer.write_boundary()

    def _finalize(self, state: _StreamState) -> None:
        if state.finalized:
            return
        now = self._clock()
        if state.chunk.n:
            self._flush(state, now)
        self._maybe_clock_offset(state, now)
        self._writer.write_stream_footer(
            state.stream_id,
            state.first_ts if state.first_ts is not None else 0.0,
            state.last_ts if state.last_ts is not None else 0.0,
            state.sample_count, state.dropped_count)
        state.finalized = True
        state.inlet.close()

    # -- control --------------------------------------------------------------

    def stop(self) -> dict:
        """Flush everything, write footers, close the file.

        Idempotent: a second call returns the same summary.
        """
        if self._summary is not None:
            return self._summary
        self._stop.set()
        for state in self.streams:
            if state.thread is not None:
                state.thread.join(timeout=10.0)
        for state in self.streams:
            self._finalize(state)
        self._writer.close()
        try:
            self._sink.close()
        except OSError as exc:
            raise IoFailure(f"closing {self.path!r} failed: {exc}") from exc
        self.state = "stopped"
        summary = {}
        for state in self.streams:
            duration = 0.0
            if state.first_ts is not None and state.last_ts is not None:
                duration = state.last_ts - state.first_ts
            summary[state.stream_id] = {
                "name": state.inlet.info.name,
                "type": state.inlet.info.stream_type,
                "sample_count": state.sample_count,
                "dropped_count": state.dropped_count,
                "first_timestamp": state.first_ts,
                "last_timestamp": state.last_ts,
                "duration": duration,
            }
        self._summary = summary
        return summary

    def chunk_log(self, stream_id: int) -> list:
        """(sample count, elapsed seconds) per flushed chunk, for diagnostics."""
        for state in self.streams:
            if state.stream_id == stream_id:
                return list(state.chunk_log)
        raise KeyError(stream_id)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def record_data(path, queries=None, resolve_timeout: float = 2.0, *,
                t_th: float = DEFAULT_CHUNK_THRESHOLD,
                discovery_port: int | None = None,
                poll_interval: float = 0.02, clock=local_clock) -> RecordingSession:
    """Resolve matching streams and start recording them to path.

    The file is opened before any network activity so an unwritable path
    fails fast. Zero matches is not an error: the session runs with a
    header-only file and a warning. Recording proceeds on background
    threads until stop().
    """
    if queries is None or not list(queries):
        queries = [ResolveQuery()]
    try:
        sink = open(path, "wb")
    except OSError as exc:
        raise IoFailure(f"cannot open {path!r} for writing: {exc}") from exc
    sink.close()

    seen: dict[str, StreamInfo] = {}
    for query in queries:
        for info in resolve_streams(query, resolve_timeout,
                                    discovery_port=discovery_port):
            seen.setdefault(info.uid, info)
    return RecordingSession(path, list(seen.values()), t_th=t_th,
                            discovery_port=discovery_port,
                            poll_interval=poll_interval, clock=clock)
