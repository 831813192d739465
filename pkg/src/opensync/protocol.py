"""Stream identity, sample framing, and the ASCII control messages.

Everything the producers, consumers, and the recorder exchange is defined
here so the byte layouts exist in exactly one place:

* stream-info XML (also the payload of file stream headers),
* sample frames: ``[1-byte ts flag (0 or 8)][optional f64 LE timestamp]
  [channel values, little-endian]``; string channels are length-prefixed
  with the same 1/4/8-byte scheme the file container uses,
* the resolve / announce / time-sync datagrams and the TCP pull handshake.

All functions are pure and safe to call from any thread.
"""

from __future__ import annotations

import math
import secrets
import struct
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

from .errors import (
    DecodeBadFlag,
    DecodeTruncated,
    FormatMismatch,
    InvalidQuery,
    MalformedInfo,
    MalformedMessage,
)

DEFAULT_DISCOVERY_PORT = 16571

RESOLVE_MAGIC = "OPENSYNC-RESOLVE/1"
ANNOUNCE_MAGIC = "OPENSYNC-ANNOUNCE/1"
TIME_MAGIC = "OPENSYNC-TIME/1"
PULL_MAGIC = "OPENSYNC-PULL/1"

CHANNEL_FORMATS = ("float32", "double64", "int32", "int16", "int8", "string")

_STRUCT_CODE = {
    "float32": "<f",
    "double64": "<d",
    "int32": "<i",
    "int16": "<h",
    "int8": "<b",
}
_VALUE_SIZE = {"float32": 4, "double64": 8, "int32": 4, "int16": 2, "int8": 1}

TS_EXPLICIT = 8
TS_DEDUCED = 0

_QUERY_KEYS = ("name", "type", "source_id")

_INFO_FIELDS = ("name", "type", "channel_count", "nominal_srate",
                "channel_format", "source_id", "uid")


def new_uid() -> str:
    """128-bit random hex, regenerated for every outlet instance."""
    return secrets.token_hex(16)


def new_nonce() -> str:
    """64-bit random hex used to pair datagram requests with replies."""
    return secrets.token_hex(8)


def _format_float(x: float) -> str:
    # repr() round-trips doubles exactly through float().
    return repr(float(x))


@dataclass(frozen=True)
class StreamInfo:
    """Identity, channel layout, and transport endpoint of one stream."""

    name: str
    stream_type: str
    channel_count: int
    nominal_srate: float
    channel_format: str
    source_id: str = ""
    uid: str = ""
    endpoint: tuple[str, int] | None = None

    def validate(self) -> None:
        if not isinstance(self.channel_count, int) or self.channel_count < 1:
            raise MalformedInfo(f"channel_count must be >= 1, got {self.channel_count!r}")
        if not math.isfinite(self.nominal_srate) or self.nominal_srate < 0:
            raise MalformedInfo(f"nominal_srate must be finite and >= 0, got {self.nominal_srate!r}")
        if self.channel_format not in CHANNEL_FORMATS:
            raise MalformedInfo(f"unknown channel_format {self.channel_format!r}")


@dataclass(frozen=True)
class Sample:
    """One timestamped vector of channel values."""

    timestamp: float
    values: tuple

    def validate(self, info: StreamInfo) -> None:
        if len(self.values) != info.channel_count:
            raise FormatMismatch(
                f"expected {info.channel_count} values, got {len(self.values)}")
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise FormatMismatch(f"bad timestamp {self.timestamp!r}")


@dataclass(frozen=True)
class ResolveQuery:
    """Conjunction of (key, value) predicates; "*" matches anything."""

    predicates: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for key, _ in self.predicates:
            if key not in _QUERY_KEYS:
                raise InvalidQuery(f"unknown query key {key!r}")

    @classmethod
    def of(cls, *, name: str | None = None, type: str | None = None,
           source_id: str | None = None) -> "ResolveQuery":
        preds = set()
        if name is not None:
            preds.add(("name", name))
        if type is not None:
            preds.add(("type", type))
        if source_id is not None:
            preds.add(("source_id", source_id))
        return cls(frozenset(preds))

    @classmethod
    def parse(cls, text: str) -> "ResolveQuery":
        """Parse "key=value&key=value"; empty text matches all streams."""
        text = text.strip()
        if not text or text == "*":
            return cls()
        preds = set()
        for pair in text.split("&"):
            key, sep, value = pair.partition("=")
            if not sep:
                raise InvalidQuery(f"predicate {pair!r} is not key=value")
            preds.add((key.strip(), value.strip()))
        return cls(frozenset(preds))

    def to_text(self) -> str:
        return "&".join(f"{k}={v}" for k, v in sorted(self.predicates))


def match_query(info: StreamInfo, query: ResolveQuery) -> bool:
    """True iff every predicate matches; the empty query matches everything."""
    fields = {"name": info.name, "type": info.stream_type,
              "source_id": info.source_id}
    return all(value == "*" or fields[key] == value
               for key, value in query.predicates)


# --- stream-info XML -------------------------------------------------------

def encode_stream_info(info: StreamInfo) -> bytes:
    """UTF-8 XML with the seven identity fields in fixed order.

    The transport endpoint is discovery state, not identity, and is not
    encoded.
    """
    info.validate()
    root = ET.Element("info")
    ET.SubElement(root, "name").text = info.name
    ET.SubElement(root, "type").text = info.stream_type
    ET.SubElement(root, "channel_count").text = str(info.channel_count)
    ET.SubElement(root, "nominal_srate").text = _format_float(info.nominal_srate)
    ET.SubElement(root, "channel_format").text = info.channel_format
    ET.SubElement(root, "source_id").text = info.source_id
    ET.SubElement(root, "uid").text = info.uid
    return ET.tostring(root, encoding="unicode").encode("utf-8")


def decode_stream_info(data: bytes) -> StreamInfo:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedInfo(f"stream info XML does not parse: {exc}") from exc
    if root.tag != "info":
        raise MalformedInfo(f"expected <info> root, got <{root.tag}>")
    values = {}
    for name in _INFO_FIELDS:
        node = root.find(name)
        if node is None:
            raise MalformedInfo(f"missing <{name}> element")
        values[name] = node.text or ""
    try:
        channel_count = int(values["channel_count"])
        nominal_srate = float(values["nominal_srate"])
    except ValueError as exc:
        raise MalformedInfo(str(exc)) from exc
    info = StreamInfo(
        name=values["name"],
        stream_type=values["type"],
        channel_count=channel_count,
        nominal_srate=nominal_srate,
        channel_format=values["channel_format"],
        source_id=values["source_id"],
        uid=values["uid"],
    )
    info.validate()
    return info


# --- length-coded unsigned integers (shared with the file container) -------

def encode_length(n: int) -> bytes:
    """1 byte holding 1/4/8, then that many little-endian length bytes."""
    if n < 0:
        raise ValueError("length must be unsigned")
    if n <= 0xFF:
        return b"\x01" + n.to_bytes(1, "little")
    if n <= 0xFFFFFFFF:
        return b"\x04" + n.to_bytes(4, "little")
    return b"\x08" + n.to_bytes(8, "little")


def try_decode_length(buf, pos: int):
    """Return (value, next_pos) or None if more bytes are needed."""
    if pos >= len(buf):
        return None
    numlen = buf[pos]
    if numlen not in (1, 4, 8):
        raise DecodeBadFlag(f"invalid length prefix {numlen}")
    if pos + 1 + numlen > len(buf):
        return None
    value = int.from_bytes(buf[pos + 1:pos + 1 + numlen], "little")
    return value, pos + 1 + numlen


# --- sample frames ---------------------------------------------------------

def sample_frame_size(channel_format: str, channel_count: int,
                      explicit_timestamp: bool = True) -> int:
    """Exact frame size for non-string formats."""
    if channel_format == "string":
        raise ValueError("string frames are variable-length")
    return 1 + (8 if explicit_timestamp else 0) + _VALUE_SIZE[channel_format] * channel_count


def encode_sample(sample: Sample, channel_format: str,
                  ts_policy: str = "always") -> bytes:
    """Encode one sample; ts_policy "deduced" omits the timestamp bytes."""
    if ts_policy not in ("always", "deduced"):
        raise ValueError(f"ts_policy must be 'always' or 'deduced', got {ts_policy!r}")
    out = bytearray()
    if ts_policy == "always":
        out.append(TS_EXPLICIT)
        out += struct.pack("<d", sample.timestamp)
    else:
        out.append(TS_DEDUCED)
    if channel_format == "string":
        for value in sample.values:
            if not isinstance(value, str):
                raise FormatMismatch(f"string channel got {type(value).__name__}")
            raw = value.encode("utf-8")
            out += encode_length(len(raw))
            out += raw
    else:
        code = _STRUCT_CODE[channel_format]
        try:
            for value in sample.values:
                out += struct.pack(code, value)
        except (struct.error, TypeError) as exc:
            raise FormatMismatch(f"value does not fit {channel_format}: {exc}") from exc
    return bytes(out)


def try_decode_sample(buf, pos: int, channel_format: str, channel_count: int):
    """Decode one frame from buf at pos.

    Returns (timestamp-or-None, values tuple, next_pos), or None when the
    buffer ends mid-frame (streaming callers wait for more bytes).
    """
    if pos >= len(buf):
        return None
    flag = buf[pos]
    if flag not in (TS_EXPLICIT, TS_DEDUCED):
        raise DecodeBadFlag(f"invalid timestamp flag {flag}")
    pos += 1
    timestamp = None
    if flag == TS_EXPLICIT:
        if pos + 8 > len(buf):
            return None
        timestamp = struct.unpack_from("<d", buf, pos)[0]
        pos += 8
    values = []
    if channel_format == "string":
        for _ in range(channel_count):
            got = try_decode_length(buf, pos)
            if got is None:
                return None
            size, pos = got
            if pos + size > len(buf):
                return None
            values.append(bytes(buf[pos:pos + size]).decode("utf-8"))
            pos += size
    else:
        size = _VALUE_SIZE[channel_format]
        code = _STRUCT_CODE[channel_format]
        if pos + size * channel_count > len(buf):
            return None
        for _ in range(channel_count):
            values.append(struct.unpack_from(code, buf, pos)[0])
            pos += size
    return timestamp, tuple(values), pos


def decode_sample(buf, pos: int, channel_format: str, channel_count: int):
    """Strict variant: raises DecodeTruncated instead of returning None."""
    got = try_decode_sample(buf, pos, channel_format, channel_count)
    if got is None:
        raise DecodeTruncated(f"sample frame truncated at byte {pos}")
    return got


# --- control messages ------------------------------------------------------

def build_resolve_request(query: ResolveQuery, reply_port: int, nonce: str) -> bytes:
    return (f"{RESOLVE_MAGIC}\n{query.to_text()}\n"
            f"reply-port={reply_port}\nnonce={nonce}\n").encode("utf-8")


def parse_resolve_request(data: bytes):
    """Returns (query, reply_port, nonce)."""
    lines = _split_lines(data, RESOLVE_MAGIC, 4)
    query = ResolveQuery.parse(lines[1])
    reply_port = int(_expect_kv(lines[2], "reply-port"))
    nonce = _expect_kv(lines[3], "nonce")
    return query, reply_port, nonce


def build_announce(nonce: str, host: str, tcp_port: int, info_xml: bytes) -> bytes:
    head = f"{ANNOUNCE_MAGIC}\nnonce={nonce}\ntcp={host}:{tcp_port}\n"
    return head.encode("utf-8") + info_xml


def parse_announce(data: bytes):
    """Returns (nonce, host, tcp_port, StreamInfo with endpoint filled in)."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedMessage(str(exc)) from exc
    parts = text.split("\n", 3)
    if len(parts) != 4 or parts[0] != ANNOUNCE_MAGIC:
        raise MalformedMessage("not an announce message")
    nonce = _expect_kv(parts[1], "nonce")
    endpoint = _expect_kv(parts[2], "tcp")
    host, sep, port_text = endpoint.rpartition(":")
    if not sep:
        raise MalformedMessage(f"bad tcp endpoint {endpoint!r}")
    info = decode_stream_info(parts[3].encode("utf-8"))
    info = replace(info, endpoint=(host, int(port_text)))
    return nonce, host, int(port_text), info


def build_time_request(nonce: str, t0: float) -> bytes:
    return f"{TIME_MAGIC}\nnonce={nonce}\nt0={_format_float(t0)}\n".encode("ascii")


def parse_time_request(data: bytes):
    """Returns (nonce, t0)."""
    lines = _split_lines(data, TIME_MAGIC, 3)
    return _expect_kv(lines[1], "nonce"), float(_expect_kv(lines[2], "t0"))


def build_time_reply(request: bytes, t1: float, t2: float) -> bytes:
    """The reply echoes the request and appends the server timestamps."""
    return request + f"t1={_format_float(t1)}\nt2={_format_float(t2)}\n".encode("ascii")


def parse_time_reply(data: bytes):
    """Returns (nonce, t0, t1, t2)."""
    lines = _split_lines(data, TIME_MAGIC, 5)
    nonce = _expect_kv(lines[1], "nonce")
    t0 = float(_expect_kv(lines[2], "t0"))
    t1 = float(_expect_kv(lines[3], "t1"))
    t2 = float(_expect_kv(lines[4], "t2"))
    return nonce, t0, t1, t2


def build_pull_request(uid: str) -> bytes:
    return f"{PULL_MAGIC}\nuid={uid}\n\n".encode("ascii")


def parse_pull_request(data: bytes) -> str:
    """Returns the requested uid."""
    lines = _split_lines(data, PULL_MAGIC, 2)
    return _expect_kv(lines[1], "uid")


def _split_lines(data: bytes, magic: str, expect: int) -> list:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedMessage(str(exc)) from exc
    lines = text.split("\n")
    if len(lines) < expect or lines[0] != magic:
        raise MalformedMessage(f"expected {magic} with {expect} lines")
    return lines


def _expect_kv(line: str, key: str) -> str:
    actual, sep, value = line.partition("=")
    if not sep or actual != key:
        raise MalformedMessage(f"expected {key}=..., got {line!r}")
    return value
