"""Writer and reader for the .xdf container that stores recorded sessions.

File layout: the 4-byte magic "XDF:" followed by chunks. Every chunk is
``[1-byte NumLengthBytes in {1,4,8}][length, LE, that many bytes]
[u16 LE tag][content]`` where length counts the tag plus the content and the
smallest sufficient NumLengthBytes is used.

Tags: 1 FileHeader (XML), 2 StreamHeader (u32 stream id + stream-info XML),
3 Samples, 4 ClockOffset (u32 id + two f64: collection time, offset),
5 Boundary (16 fixed bytes), 6 StreamFooter (u32 id + XML).

A Samples chunk is ``[u32 LE stream id][length-coded sample count]`` followed
by sample frames as defined in the protocol module. The first frame of every
chunk carries an explicit timestamp; later frames drop it (flag 0) only when
the reader's reconstruction ``previous + 1/nominal_srate`` reproduces the
original double bit-exactly, so a round trip is always lossless.
"""

from __future__ import annotations

import logging
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from threading import Lock

import numpy as np

from . import protocol
from .errors import (
    BadMagic,
    FormatMismatch,
    IoFailure,
    MalformedInfo,
    TruncatedChunk,
    UnknownStreamId,
)
from .protocol import Sample, StreamInfo

log = logging.getLogger("opensync.xdf")

MAGIC = b"XDF:"

TAG_FILE_HEADER = 1
TAG_STREAM_HEADER = 2
TAG_SAMPLES = 3
TAG_CLOCK_OFFSET = 4
TAG_BOUNDARY = 5
TAG_STREAM_FOOTER = 6

_TAGS_WITH_STREAM_ID = (TAG_STREAM_HEADER, TAG_SAMPLES, TAG_CLOCK_OFFSET,
                        TAG_STREAM_FOOTER)

# Fixed filler payload so a scanner can re-synchronize after corruption.
BOUNDARY_PAYLOAD = bytes((
    0x43, 0xA5, 0x46, 0xDC, 0xCB, 0xF5, 0x41, 0x0F,
    0xB3, 0x0E, 0xD5, 0x46, 0x73, 0x83, 0xCB, 0xE4,
))


@dataclass(frozen=True)
class XdfChunkRecord:
    """One raw chunk; payload excludes the stream id where one is present."""

    tag: int
    stream_id: int | None
    payload: bytes


@dataclass
class LoadedStream:
    """One stream as read back from disk."""

    stream_id: int
    info: StreamInfo
    samples: list = field(default_factory=list)
    offsets: list = field(default_factory=list)
    footer: dict | None = None
    corrected_timestamps: list = field(default_factory=list)


def encode_chunk(tag: int, content: bytes) -> bytes:
    body = struct.pack("<H", tag) + content
    return protocol.encode_length(len(body)) + body


def encode_samples_content(stream_id: int, samples, channel_format: str,
                           nominal_srate: float) -> bytes:
    if not samples:
        raise FormatMismatch("a Samples chunk may not be empty")
    out = bytearray(struct.pack("<I", stream_id))
    out += protocol.encode_length(len(samples))
    interval = 1.0 / nominal_srate if nominal_srate > 0 else None
    prev = None
    for sample in samples:
        deduced = (prev is not None and interval is not None
                   and prev + interval == sample.timestamp)
        out += protocol.encode_sample(
            sample, channel_format, "deduced" if deduced else "always")
        prev = sample.timestamp
    return bytes(out)


def _footer_xml(first_timestamp: float, last_timestamp: float,
                sample_count: int, dropped_count: int) -> bytes:
    root = ET.Element("info")
    ET.SubElement(root, "first_timestamp").text = repr(float(first_timestamp))
    ET.SubElement(root, "last_timestamp").text = repr(float(last_timestamp))
    ET.SubElement(root, "sample_count").text = str(sample_count)
    ET.SubElement(root, "dropped_count").text = str(dropped_count)
    return ET.tostring(root, encoding="unicode").encode("utf-8")


def _parse_footer(payload: bytes) -> dict:
    try:
        root = ET.fromstring(payload)
    except ET.ParseError as exc:
        raise MalformedInfo(f"stream footer does not parse: {exc}") from exc
    def text(tag):
        node = root.find(tag)
        if node is None or node.text is None:
            raise MalformedInfo(f"stream footer missing <{tag}>")
        return node.text
    return {
        "first_timestamp": float(text("first_timestamp")),
        "last_timestamp": float(text("last_timestamp")),
        "sample_count": int(text("sample_count")),
        "dropped_count": int(text("dropped_count")),
    }


class XdfWriter:
    """Serializes all chunk writes for one output file.

    The recorder's ingest threads all funnel through this object; the lock
    makes each chunk atomic in the file.
    """

    def __init__(self, sink):
        self._sink = sink
        self._lock = Lock()
        self._stream_ids = set()
        self._closed = False
        self._write(MAGIC)

    def _write(self, data: bytes) -> None:
        try:
            self._sink.write(data)
        except OSError as exc:
            raise IoFailure(f"write failed: {exc}") from exc

    def write_chunk(self, tag: int, content: bytes) -> None:
        with self._lock:
            self._write(encode_chunk(tag, content))

    def write_file_header(self, created: str | None = None) -> None:
        if created is None:
            created = datetime.now(timezone.utc).isoformat()
        root = ET.Element("info")
        ET.SubElement(root, "version").text = "1.0"
        ET.SubElement(root, "datetime").text = created
        self.write_chunk(TAG_FILE_HEADER, ET.tostring(root, encoding="unicode").encode("utf-8"))

    def write_stream_header(self, stream_id: int, info: StreamInfo) -> None:
        self._stream_ids.add(stream_id)
        content = struct.pack("<I", stream_id) + protocol.encode_stream_info(info)
        self.write_chunk(TAG_STREAM_HEADER, content)

    def _check_id(self, stream_id: int) -> None:
        if stream_id not in self._stream_ids:
            raise UnknownStreamId(f"stream id {stream_id} has no header")

    def write_samples(self, stream_id: int, samples, channel_format: str,
                      nominal_srate: float) -> None:
        self._check_id(stream_id)
        content = encode_samples_content(stream_id, samples, channel_format,
                                         nominal_srate)
        self.write_chunk(TAG_SAMPLES, content)

    def write_clock_offset(self, stream_id: int, collection_time: float,
                           offset: float) -> None:
        self._check_id(stream_id)
        content = struct.pack("<Idd", stream_id, collection_time, offset)
        self.write_chunk(TAG_CLOCK_OFFSET, content)

    def write_boundary(self) -> None:
        self.write_chunk(TAG_BOUNDARY, BOUNDARY_PAYLOAD)

    def write_stream_footer(self, stream_id: int, first_timestamp: float,
                            last_timestamp: float, sample_count: int,
                            dropped_count: int) -> None:
        self._check_id(stream_id)
        content = struct.pack("<I", stream_id) + _footer_xml(
            first_timestamp, last_timestamp, sample_count, dropped_count)
        self.write_chunk(TAG_STREAM_FOOTER, content)

    def close(self) -> None:
        with self._lock:
            if not self._closed:
                self._closed = True
                try:
                    self._sink.flush()
                except (OSError, ValueError):
                    pass


def read_chunks(source):
    """Yield XdfChunkRecord in file order; unknown tags are skipped."""
    magic = source.read(len(MAGIC))
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    pos = len(MAGIC)
    while True:
        head = source.read(1)
        if not head:
            return
        numlen = head[0]
        if numlen not in (1, 4, 8):
            raise TruncatedChunk(f"invalid chunk length prefix {numlen}", pos)
        raw_len = source.read(numlen)
        if len(raw_len) != numlen:
            raise TruncatedChunk("file ends inside a chunk length", pos)
        length = int.from_bytes(raw_len, "little")
        if length < 2:
            raise TruncatedChunk(f"chunk length {length} too small for a tag", pos)
        body = source.read(length)
        if len(body) != length:
            raise TruncatedChunk("file ends inside a chunk body", pos)
        tag = struct.unpack_from("<H", body)[0]
        content = body[2:]
        chunk_pos = pos
        pos += 1 + numlen + length
        if tag not in (TAG_FILE_HEADER, TAG_STREAM_HEADER, TAG_SAMPLES,
                       TAG_CLOCK_OFFSET, TAG_BOUNDARY, TAG_STREAM_FOOTER):
            log.warning("skipping unknown chunk tag %d at byte %d", tag, chunk_pos)
            continue
        stream_id = None
        if tag in _TAGS_WITH_STREAM_ID:
            if len(content) < 4:
                raise TruncatedChunk("chunk too short for a stream id", chunk_pos)
            stream_id = struct.unpack_from("<I", content)[0]
            content = content[4:]
        yield XdfChunkRecord(tag=tag, stream_id=stream_id, payload=content)


def _decode_samples(payload: bytes, info: StreamInfo, prev_ts, position: int):
    got = protocol.try_decode_length(payload, 0)
    if got is None:
        raise TruncatedChunk("Samples chunk ends inside its count", position)
    count, pos = got
    interval = 1.0 / info.nominal_srate if info.nominal_srate > 0 else None
    samples = []
    for _ in range(count):
        frame = protocol.try_decode_sample(payload, pos, info.channel_format,
                                           info.channel_count)
        if frame is None:
            raise TruncatedChunk("Samples chunk ends inside a frame", position)
        timestamp, values, pos = frame
        if timestamp is None:
            if prev_ts is None or interval is None:
                raise TruncatedChunk(
                    "deduced timestamp with no reference sample", position)
            timestamp = prev_ts + interval
        samples.append(Sample(timestamp=timestamp, values=values))
        prev_ts = timestamp
    return samples, prev_ts


def correct_timestamps(raw, offsets):
    """raw + piecewise-linear offset (constant beyond the measured range)."""
    if not raw:
        return []
    if not offsets:
        return list(raw)
    pairs = sorted(offsets)
    times = np.array([p[0] for p in pairs])
    values = np.array([p[1] for p in pairs])
    raw_arr = np.asarray(raw, dtype=float)
    return list(raw_arr + np.interp(raw_arr, times, values))


def load_xdf(path) -> list:
    """Read a whole file into LoadedStream objects, in stream-id order."""
    streams: dict[int, LoadedStream] = {}
    prev_ts: dict[int, float] = {}
    position = 0
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    with fh:
        for rec in read_chunks(fh):
            if rec.tag == TAG_STREAM_HEADER:
                info = decode_header_payload(rec.payload)
                streams[rec.stream_id] = LoadedStream(rec.stream_id, info)
                prev_ts[rec.stream_id] = None
            elif rec.tag in (TAG_SAMPLES, TAG_CLOCK_OFFSET, TAG_STREAM_FOOTER):
                stream = streams.get(rec.stream_id)
                if stream is None:
                    raise UnknownStreamId(
                        f"chunk tag {rec.tag} references unknown stream "
                        f"{rec.stream_id}")
                if rec.tag == TAG_SAMPLES:
                    samples, last = _decode_samples(
                        rec.payload, stream.info, prev_ts[rec.stream_id], position)
                    stream.samples.extend(samples)
                    prev_ts[rec.stream_id] = last
                elif rec.tag == TAG_CLOCK_OFFSET:
                    t, off = struct.unpack("<dd", rec.payload)
                    stream.offsets.append((t, off))
                else:
                    stream.footer = _parse_footer(rec.payload)
    for stream in streams.values():
        raw = [s.timestamp for s in stream.samples]
        stream.corrected_timestamps = correct_timestamps(raw, stream.offsets)
    return [streams[k] for k in sorted(streams)]


def decode_header_payload(payload: bytes) -> StreamInfo:
    return protocol.decode_stream_info(payload)
