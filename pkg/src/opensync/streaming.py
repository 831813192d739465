"""Producer (outlet) and consumer (inlet) engines.

An outlet owns a bounded drop-oldest ring of samples, a TCP listener that
serves them to pull sessions, and a UDP responder that answers resolve
broadcasts and time-sync requests on the discovery port. An inlet resolves
an outlet's endpoint, pulls samples over one TCP session, and keeps a
history of clock measurements against the producer host.

Nothing here ever blocks a producer on consumer progress: a full ring drops
its oldest sample and counts the drop.
"""

from __future__ import annotations

import logging
import math
import socket
import struct
import threading
from collections import deque
from dataclasses import replace

from . import protocol
from .clocksync import (
    HISTORY_WINDOW,
    ClockMeasurement,
    estimate_offset,
    local_clock,
    measure_offset,
)
from .errors import (
    ConnectionLost,
    HandshakeRejected,
    InvalidCapacity,
    InvalidExchange,
    FormatMismatch,
    MalformedMessage,
    NoMeasurements,
    OutletClosed,
    PortUnavailable,
)
from .protocol import (
    DEFAULT_DISCOVERY_PORT,
    ResolveQuery,
    Sample,
    StreamInfo,
    match_query,
)

log = logging.getLogger("opensync.streaming")

RESOLVE_INTERVAL = 0.25
_POLL = 0.25
_SERVE_BATCH = 512


def default_capacity(info: StreamInfo) -> int:
    """Five minutes of samples at the nominal rate, at least 1000."""
    return max(int(info.nominal_srate * 300), 1000)


def _udp_socket() -> socket.socket:
    return socket.socket(socket.AF_INET, socket.SOCK_DGRAM)


class Outlet:
    """Advertises one stream and serves its samples over TCP."""

    def __init__(self, info: StreamInfo, capacity: int | None = None, *,
                 discovery_port: int | None = None, clock=local_clock):
        info.validate()
        if capacity is None:
            capacity = default_capacity(info)
        if not isinstance(capacity, int) or capacity <= 0:
            raise InvalidCapacity(f"capacity must be a positive int, got {capacity!r}")
        self.info = replace(info, uid=protocol.new_uid())
        self.capacity = capacity
        self.discovery_port = (DEFAULT_DISCOVERY_PORT if discovery_port is None
                               else discovery_port)
        self._clock = clock
        self._buf: deque[Sample] = deque()
        self._lock = threading.Lock()
        self._data = threading.Condition(self._lock)
        self._dropped = 0
        self._pushed = 0
        self._closed = False
        self._addr_cache: dict[str, str] = {}

        try:
            self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._server.bind(("", 0))
            self._server.listen(8)
            self._server.settimeout(_POLL)
        except OSError as exc:
            raise PortUnavailable(f"cannot open TCP listener: {exc}") from exc
        self.tcp_port = self._server.getsockname()[1]
        self.info = replace(self.info, endpoint=("127.0.0.1", self.tcp_port))

        try:
            self._responder = _udp_socket()
            self._responder.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            if hasattr(socket, "SO_REUSEPORT"):
                self._responder.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
            self._responder.bind(("", self.discovery_port))
            self._responder.settimeout(_POLL)
        except OSError as exc:
            self._server.close()
            raise PortUnavailable(
                f"cannot bind discovery port {self.discovery_port}: {exc}") from exc

        self._threads = [
            threading.Thread(target=self._accept_loop, daemon=True,
                             name=f"outlet-accept-{self.info.name}"),
            threading.Thread(target=self._responder_loop, daemon=True,
                             name=f"outlet-discovery-{self.info.name}"),
        ]
        self._sessions: list[threading.Thread] = []
        for t in self._threads:
            t.start()

    # -- producer side ------------------------------------------------------

    def push_sample(self, values, timestamp: float | None = None) -> None:
        """Enqueue one sample; stamps with the outlet clock when no timestamp
        is given. A full ring drops its oldest sample."""
        if self._closed:
            raise OutletClosed(f"outlet {self.info.name} is closed")
        values = tuple(values)
        if len(values) != self.info.channel_count:
            raise FormatMismatch(
                f"expected {self.info.channel_count} values, got {len(values)}")
        if self.info.channel_format == "string":
            if not all(isinstance(v, str) for v in values):
                raise FormatMismatch("string stream takes str values")
        else:
            if not all(isinstance(v, (int, float)) for v in values):
                raise FormatMismatch(
                    f"{self.info.channel_format} stream takes numeric values")
        if timestamp is None:
            timestamp = self._clock()
        elif not (math.isfinite(timestamp) and timestamp >= 0):
            raise FormatMismatch(f"timestamp must be finite and >= 0, got {timestamp!r}")
        with self._lock:
            if len(self._buf) >= self.capacity:
                self._buf.popleft()
                self._dropped += 1
                if self._dropped == 1 or self._dropped % 1000 == 0:
                    log.warning("outlet %s: buffer full, %d dropped so far",
                                self.info.name, self._dropped)
            self._buf.append(Sample(timestamp=timestamp, values=values))
            self._pushed += 1
            self._data.notify_all()

    @property
    def dropped_count(self) -> int:
        with self._lock:
            return self._dropped

    @property
    def pushed_count(self) -> int:
        with self._lock:
            return self._pushed

    @property
    def buffered_count(self) -> int:
        with self._lock:
            return len(self._buf)

    def close(self) -> None:
        """Stop advertising and serving; pending samples are flushed to any
        connected session before its socket is closed."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
            self._data.notify_all()
        for t in self._sessions:
            t.join(timeout=5.0)
        self._responder.close()
        self._server.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- serving ------------------------------------------------------------

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                if self._closed:
                    return
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True,
                                 name=f"outlet-serve-{self.info.name}")
            self._sessions.append(t)
            t.start()

    def _serve(self, conn: socket.socket) -> None:
        try:
            conn.settimeout(5.0)
            request = bytearray()
            while b"\n\n" not in request:
                got = conn.recv(4096)
                if not got:
                    return
                request += got
                if len(request) > 4096:
                    return
            try:
                uid = protocol.parse_pull_request(bytes(request))
            except MalformedMessage:
                return
            if uid != self.info.uid:
                conn.sendall(struct.pack("<I", 0))
                return
            xml = protocol.encode_stream_info(self.info)
            conn.sendall(struct.pack("<I", len(xml)) + xml)
            conn.settimeout(None)
            fmt = self.info.channel_format
            while True:
                with self._lock:
                    while not self._buf and not self._closed:
                        self._data.wait(timeout=0.05)
                    batch = [self._buf.popleft()
                             for _ in range(min(len(self._buf), _SERVE_BATCH))]
                    done = self._closed and not self._buf and not batch
                if batch:
                    conn.sendall(b"".join(
                        protocol.encode_sample(s, fmt) for s in batch))
                elif done:
                    return
        except OSError:
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    # -- discovery / time sync ----------------------------------------------

    def _local_addr_for(self, peer_ip: str) -> str:
        addr = self._addr_cache.get(peer_ip)
        if addr is None:
            probe = _udp_socket()
            try:
                probe.connect((peer_ip, 9))
                addr = probe.getsockname()[0]
            except OSError:
                addr = "127.0.0.1"
            finally:
                probe.close()
            self._addr_cache[peer_ip] = addr
        return addr

    def _responder_loop(self) -> None:
        while True:
            try:
                data, source = self._responder.recvfrom(65535)
            except socket.timeout:
                if self._closed:
                    return
                continue
            except OSError:
                return
            t_recv = self._clock()
            try:
                if data.startswith(protocol.RESOLVE_MAGIC.encode()):
                    query, reply_port, nonce = protocol.parse_resolve_request(data)
                    if match_query(self.info, query):
                        host = self._local_addr_for(source[0])
                        announce = protocol.build_announce(
                            nonce, host, self.tcp_port,
                            protocol.encode_stream_info(self.info))
                        self._responder.sendto(announce, (source[0], reply_port))
                elif data.startswith(protocol.TIME_MAGIC.encode()):
                    reply = protocol.build_time_reply(data, t_recv, self._clock())
                    self._responder.sendto(reply, source)
            except (MalformedMessage, ValueError, OSError):
                continue


def create_outlet(info: StreamInfo, capacity: int | None = None, *,
                  discovery_port: int | None = None, clock=local_clock) -> Outlet:
    """Open a TCP listener and discovery responder for one stream."""
    return Outlet(info, capacity, discovery_port=discovery_port, clock=clock)


def resolve_streams(query: ResolveQuery | None = None, timeout: float = 1.0, *,
                    discovery_port: int | None = None,
                    extra_addrs=()) -> list[StreamInfo]:
    """Broadcast the query every 250 ms until timeout; de-duplicated by uid."""
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    if query is None:
        query = ResolveQuery()
    port = DEFAULT_DISCOVERY_PORT if discovery_port is None else discovery_port
    targets = ["127.0.0.1", "255.255.255.255", *extra_addrs]
    nonce = protocol.new_nonce()
    found: dict[str, StreamInfo] = {}
    sock = _udp_socket()
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)
        sock.bind(("", 0))
        request = protocol.build_resolve_request(query, sock.getsockname()[1], nonce)
        deadline = local_clock() + timeout
        next_send = 0.0
        while True:
            now = local_clock()
            if now >= deadline:
                break
            if now >= next_send:
                for addr in targets:
                    try:
                        sock.sendto(request, (addr, port))
                    except OSError:
                        pass
                next_send = now + RESOLVE_INTERVAL
            sock.settimeout(max(0.01, min(deadline, next_send) - now))
            try:
                data, _ = sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                got_nonce, _, _, info = protocol.parse_announce(data)
            except (MalformedMessage, ValueError):
                continue
            if got_nonce == nonce and match_query(info, query):
                found.setdefault(info.uid, info)
    finally:
        sock.close()
    return list(found.values())


class Inlet:
    """Pulls samples from one outlet and tracks its clock."""

    def __init__(self, info: StreamInfo, *, discovery_port: int | None = None,
                 clock=local_clock, connect_timeout: float = 3.0):
        if info.endpoint is None:
            raise ValueError("info.endpoint required; resolve the stream first")
        self.discovery_port = (DEFAULT_DISCOVERY_PORT if discovery_port is None
                               else discovery_port)
        self._clock = clock
        self._buf: deque[Sample] = deque()
        self._lock = threading.Lock()
        self._data = threading.Condition(self._lock)
        self._lost = False
        self._lost_reported = False
        self._closed = False
        self._history: list[ClockMeasurement] = []
        self._stop = threading.Event()
        self._sync_thread = None

        host, port = info.endpoint
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
            self._sock.sendall(protocol.build_pull_request(info.uid))
            raw_len = self._read_exact(4)
            xml_len = struct.unpack("<I", raw_len)[0]
            if xml_len == 0:
                self._sock.close()
                raise HandshakeRejected(f"outlet does not know uid {info.uid!r}")
            xml = self._read_exact(xml_len)
        except HandshakeRejected:
            raise
        except OSError as exc:
            raise ConnectionLost(f"connect to {host}:{port} failed: {exc}") from exc
        self._sock.settimeout(None)  # idle streams are not errors
        self.info = replace(protocol.decode_stream_info(xml), endpoint=(host, port))
        self._reader = threading.Thread(target=self._reader_loop, daemon=True,
                                        name=f"inlet-read-{self.info.name}")
        self._reader.start()

    def _read_exact(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            got = self._sock.recv(n - len(out))
            if not got:
                raise OSError("connection closed during handshake")
            out += got
        return bytes(out)

    def _reader_loop(self) -> None:
        fmt = self.info.channel_format
        nchan = self.info.channel_count
        pending = bytearray()
        while True:
            try:
                got = self._sock.recv(65536)
            except OSError:
                got = b""
            if not got:
                with self._lock:
                    if not self._closed:
                        self._lost = True
                    self._data.notify_all()
                return
            pending += got
            decoded = []
            pos = 0
            while True:
                frame = protocol.try_decode_sample(pending, pos, fmt, nchan)
                if frame is None:
                    break
                timestamp, values, pos = frame
                decoded.append(Sample(timestamp=timestamp, values=values))
            del pending[:pos]
            if decoded:
                with self._lock:
                    self._buf.extend(decoded)
                    self._data.notify_all()

    def pull_chunk(self, max_samples: int = 1024, timeout: float = 0.0) -> list:
        """Up to max_samples in push order; [] on timeout. After the peer
        goes away, the remaining buffer drains first, then ConnectionLost is
        raised exactly once; later pulls return []."""
        deadline = self._clock() + timeout
        with self._lock:
            while not self._buf:
                if self._lost or self._closed:
                    break
                remaining = deadline - self._clock()
                if remaining <= 0:
                    break
                self._data.wait(timeout=min(remaining, 0.05))
            if self._buf:
                take = min(max_samples, len(self._buf))
                return [self._buf.popleft() for _ in range(take)]
            if self._lost and not self._lost_reported:
                self._lost_reported = True
                raise ConnectionLost(f"stream {self.info.name}: producer went away")
            return []

    # -- clock synchronization ----------------------------------------------

    def measure_clock_once(self, timeout: float = 0.5) -> ClockMeasurement:
        """One four-timestamp exchange against the producer's discovery port."""
        host = self.info.endpoint[0]
        nonce = protocol.new_nonce()
        sock = _udp_socket()
        try:
            sock.bind(("", 0))
            sock.settimeout(timeout)
            t0 = self._clock()
            sock.sendto(protocol.build_time_request(nonce, t0),
                        (host, self.discovery_port))
            while True:
                try:
                    data, _ = sock.recvfrom(65535)
                except socket.timeout:
                    raise NoMeasurements("time request timed out") from None
                t3 = self._clock()
                try:
                    got_nonce, _, t1, t2 = protocol.parse_time_reply(data)
                except (MalformedMessage, ValueError):
                    continue
                if got_nonce != nonce:
                    continue
                measurement = measure_offset((t0, t1, t2, t3))
                self._record_measurement(measurement)
                return measurement
        finally:
            sock.close()

    def _record_measurement(self, measurement: ClockMeasurement) -> None:
        with self._lock:
            self._history.append(measurement)
            horizon = measurement.t3 - 2 * HISTORY_WINDOW
            while self._history and self._history[0].t3 < horizon:
                self._history.pop(0)

    def start_clock_sync(self, interval: float = 5.0, burst: int = 4) -> None:
        """Background measurement loop: a quick startup burst, then one
        exchange per interval."""
        if self._sync_thread is not None:
            return

        def loop():
            for _ in range(burst):
                if self._stop.is_set():
                    return
                try:
                    self.measure_clock_once()
                except (NoMeasurements, InvalidExchange, OSError):
                    pass
                if self._stop.wait(0.05):
                    return
            while not self._stop.wait(interval):
                try:
                    self.measure_clock_once()
                except (NoMeasurements, InvalidExchange, OSError):
                    pass

        self._sync_thread = threading.Thread(
            target=loop, daemon=True, name=f"inlet-clock-{self.info.name}")
        self._sync_thread.start()

    def clock_history(self) -> list:
        with self._lock:
            return list(self._history)

    @property
    def alive(self) -> bool:
        """False once the session is closed or the producer went away."""
        with self._lock:
            return not (self._lost or self._closed)

    def time_correction(self) -> float:
        """Seconds to add to producer timestamps to express them on this
        host's clock. Raises NoMeasurements before the first exchange."""
        estimate = estimate_offset(self.clock_history(), HISTORY_WINDOW,
                                   now=self._clock())
        return -estimate.offset

    def correction_snapshot(self):
        """(collection time on the producer clock, correction to add)."""
        estimate = estimate_offset(self.clock_history(), HISTORY_WINDOW,
                                   now=self._clock())
        return estimate.at_time + estimate.offset, -estimate.offset

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            self._data.notify_all()
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        if self._sync_thread is not None:
            self._sync_thread.join(timeout=2.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def create_inlet(info: StreamInfo, *, discovery_port: int | None = None,
                 clock=local_clock) -> Inlet:
    """Open the pull session for a resolved stream."""
    return Inlet(info, discovery_port=discovery_port, clock=clock)
