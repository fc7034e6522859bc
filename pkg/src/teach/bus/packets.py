"""MQTT 3.1.1 control-packet codec (subset).

Supported packets: CONNECT, CONNACK, PUBLISH, PUBACK, SUBSCRIBE, SUBACK,
UNSUBSCRIBE, UNSUBACK, PINGREQ, PINGRESP, DISCONNECT. Clean-session only,
QoS 0/1 only; will/username/password and QoS 2 are rejected at decode time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .topics import InvalidTopicError, validate_topic

CONNECT = 1
CONNACK = 2
PUBLISH = 3
PUBACK = 4
SUBSCRIBE = 8
SUBACK = 9
UNSUBSCRIBE = 10
UNSUBACK = 11
PINGREQ = 12
PINGRESP = 13
DISCONNECT = 14

# QoS 2 handshake types exist in MQTT 3.1.1 but are outside this subset.
_QOS2_TYPES = {5, 6, 7}

PROTOCOL_NAME = "MQTT"
PROTOCOL_LEVEL = 4

CONNACK_ACCEPTED = 0
CONNACK_REFUSED_PROTOCOL = 1
CONNACK_REFUSED_IDENTIFIER = 2
CONNACK_REFUSED_UNAVAILABLE = 3

SUBACK_FAILURE = 0x80

MAX_REMAINING_LENGTH = 268_435_455


class CodecError(Exception):
    """Base class for packet encode/decode failures."""


class UnsupportedPacketError(CodecError):
    """Packet type or feature outside the supported subset."""


class MalformedPacketError(CodecError):
    """Structurally invalid packet (flags, lengths, fields)."""


class TruncatedPacketError(CodecError):
    """Buffer ends before the declared packet length."""


@dataclass
class Connect:
    client_id: str
    keepalive: int = 60
    clean_session: bool = True
    protocol_level: int = PROTOCOL_LEVEL


@dataclass
class Connack:
    session_present: bool = False
    return_code: int = CONNACK_ACCEPTED


@dataclass
class Publish:
    topic: str
    payload: bytes = b""
    qos: int = 0
    packet_id: int | None = None
    dup: bool = False
    retain: bool = False


@dataclass
class Puback:
    packet_id: int


@dataclass
class Subscribe:
    packet_id: int
    topics: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class Suback:
    packet_id: int
    return_codes: list[int] = field(default_factory=list)


@dataclass
class Unsubscribe:
    packet_id: int
    topics: list[str] = field(default_factory=list)


@dataclass
class Unsuback:
    packet_id: int


@dataclass
class Pingreq:
    pass


@dataclass
class Pingresp:
    pass


@dataclass
class Disconnect:
    pass


Packet = (
    Connect
    | Connack
    | Publish
    | Puback
    | Subscribe
    | Suback
    | Unsubscribe
    | Unsuback
    | Pingreq
    | Pingresp
    | Disconnect
)


def encode_remaining_length(n: int) -> bytes:
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise MalformedPacketError(f"remaining length out of range: {n}")
    out = bytearray()
    while True:
        byte = n % 128
        n //= 128
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_remaining_length(data: bytes, offset: int) -> tuple[int, int]:
    """Return (value, next_offset); raises on >4 byte encodings."""
    value = 0
    multiplier = 1
    for i in range(4):
        if offset + i >= len(data):
            raise TruncatedPacketError("truncated remaining length")
        byte = data[offset + i]
        value += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            return value, offset + i + 1
        multiplier *= 128
    raise MalformedPacketError("remaining length exceeds 4 bytes")


def _encode_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 65535:
        raise MalformedPacketError("string exceeds 65535 bytes")
    return struct.pack(">H", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if self.remaining() < n:
            raise TruncatedPacketError("packet body shorter than declared")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            s = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedPacketError(f"invalid UTF-8 string: {exc}") from exc
        if "\x00" in s:
            raise MalformedPacketError("string contains NUL")
        return s


def _check_packet_id(packet_id: int) -> int:
    if not 1 <= packet_id <= 65535:
        raise MalformedPacketError(f"packet id out of range: {packet_id}")
    return packet_id


def encode_packet(packet: Packet) -> bytes:
    """Serialize a packet; inverse of decode_packet."""
    if isinstance(packet, Connect):
        flags = 0x02 if packet.clean_session else 0x00
        body = (
            _encode_string(PROTOCOL_NAME)
            + bytes([packet.protocol_level, flags])
            + struct.pack(">H", packet.keepalive)
            + _encode_string(packet.client_id)
        )
        return _frame(CONNECT, 0, body)
    if isinstance(packet, Connack):
        body = bytes([1 if packet.session_present else 0, packet.return_code])
        return _frame(CONNACK, 0, body)
    if isinstance(packet, Publish):
        if packet.qos not in (0, 1):
            raise UnsupportedPacketError(f"QoS {packet.qos} not supported")
        if packet.qos == 0 and packet.dup:
            raise MalformedPacketError("DUP must be 0 for QoS 0")
        if (packet.packet_id is None) != (packet.qos == 0):
            raise MalformedPacketError("packet id required iff QoS > 0")
        try:
            validate_topic(packet.topic)
        except InvalidTopicError as exc:
            raise MalformedPacketError(str(exc)) from exc
        flags = (0x08 if packet.dup else 0) | (packet.qos << 1) | (0x01 if packet.retain else 0)
        body = _encode_string(packet.topic)
        if packet.qos:
            body += struct.pack(">H", _check_packet_id(packet.packet_id))
        body += packet.payload
        return _frame(PUBLISH, flags, body)
    if isinstance(packet, Puback):
        return _frame(PUBACK, 0, struct.pack(">H", _check_packet_id(packet.packet_id)))
    if isinstance(packet, Subscribe):
        if not packet.topics:
            raise MalformedPacketError("SUBSCRIBE requires at least one filter")
        body = struct.pack(">H", _check_packet_id(packet.packet_id))
        for pattern, qos in packet.topics:
            if qos not in (0, 1, 2):
                raise MalformedPacketError(f"invalid requested QoS: {qos}")
            body += _encode_string(pattern) + bytes([qos])
        return _frame(SUBSCRIBE, 0x02, body)
    if isinstance(packet, Suback):
        if not packet.return_codes:
            raise MalformedPacketError("SUBACK requires at least one return code")
        for code in packet.return_codes:
            if code not in (0, 1, 2, SUBACK_FAILURE):
                raise MalformedPacketError(f"invalid SUBACK return code: {code}")
        body = struct.pack(">H", _check_packet_id(packet.packet_id)) + bytes(packet.return_codes)
        return _frame(SUBACK, 0, body)
    if isinstance(packet, Unsubscribe):
        if not packet.topics:
            raise MalformedPacketError("UNSUBSCRIBE requires at least one filter")
        body = struct.pack(">H", _check_packet_id(packet.packet_id))
        for pattern in packet.topics:
            body += _encode_string(pattern)
        return _frame(UNSUBSCRIBE, 0x02, body)
    if isinstance(packet, Unsuback):
        return _frame(UNSUBACK, 0, struct.pack(">H", _check_packet_id(packet.packet_id)))
    if isinstance(packet, Pingreq):
        return _frame(PINGREQ, 0, b"")
    if isinstance(packet, Pingresp):
        return _frame(PINGRESP, 0, b"")
    if isinstance(packet, Disconnect):
        return _frame(DISCONNECT, 0, b"")
    raise UnsupportedPacketError(f"cannot encode {type(packet).__name__}")


def _frame(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


def decode_packet(data: bytes) -> Packet:
    """Parse exactly one packet from `data`; trailing bytes are an error."""
    packet, consumed = decode_packet_from(data)
    if consumed != len(data):
        raise MalformedPacketError(f"{len(data) - consumed} trailing bytes after packet")
    return packet


def decode_packet_from(data: bytes) -> tuple[Packet, int]:
    """Parse one packet from the start of `data`; returns (packet, bytes consumed)."""
    if not data:
        raise TruncatedPacketError("empty buffer")
    first = data[0]
    ptype = first >> 4
    flags = first & 0x0F
    length, body_start = decode_remaining_length(data, 1)
    if len(data) - body_start < length:
        raise TruncatedPacketError(
            f"declared {length} body bytes, got {len(data) - body_start}"
        )
    body = _Reader(data[body_start : body_start + length])
    packet = _decode_body(ptype, flags, body)
    if body.remaining():
        raise MalformedPacketError(f"{body.remaining()} unparsed bytes in packet body")
    return packet, body_start + length


def _require_flags(ptype: int, flags: int, expected: int) -> None:
    if flags != expected:
        raise MalformedPacketError(f"invalid flags 0x{flags:X} for packet type {ptype}")


def _decode_body(ptype: int, flags: int, body: _Reader) -> Packet:
    if ptype in _QOS2_TYPES:
        raise UnsupportedPacketError(f"QoS 2 packet type {ptype} not supported")
    if ptype == CONNECT:
        _require_flags(ptype, flags, 0)
        name = body.string()
        level = body.u8()
        if name != PROTOCOL_NAME:
            raise UnsupportedPacketError(f"unsupported protocol name {name!r}")
        connect_flags = body.u8()
        if connect_flags & 0x01:
            raise MalformedPacketError("CONNECT reserved flag must be 0")
        if connect_flags & 0x04:
            raise UnsupportedPacketError("will flag not supported")
        if connect_flags & 0xC0:
            raise UnsupportedPacketError("username/password not supported")
        keepalive = body.u16()
        client_id = body.string()
        return Connect(
            client_id=client_id,
            keepalive=keepalive,
            clean_session=bool(connect_flags & 0x02),
            protocol_level=level,
        )
    if ptype == CONNACK:
        _require_flags(ptype, flags, 0)
        ack_flags = body.u8()
        if ack_flags & 0xFE:
            raise MalformedPacketError("CONNACK acknowledge flags reserved bits set")
        return Connack(session_present=bool(ack_flags & 0x01), return_code=body.u8())
    if ptype == PUBLISH:
        qos = (flags >> 1) & 0x03
        if qos == 3:
            raise MalformedPacketError("PUBLISH QoS bits both set")
        if qos == 2:
            raise UnsupportedPacketError("QoS 2 not supported")
        dup = bool(flags & 0x08)
        if dup and qos == 0:
            raise MalformedPacketError("DUP set on QoS 0 PUBLISH")
        topic = body.string()
        try:
            validate_topic(topic)
        except InvalidTopicError as exc:
            raise MalformedPacketError(str(exc)) from exc
        packet_id = _check_packet_id(body.u16()) if qos else None
        payload = body.take(body.remaining())
        return Publish(
            topic=topic,
            payload=payload,
            qos=qos,
            packet_id=packet_id,
            dup=dup,
            retain=bool(flags & 0x01),
        )
    if ptype == PUBACK:
        _require_flags(ptype, flags, 0)
        return Puback(packet_id=_check_packet_id(body.u16()))
    if ptype == SUBSCRIBE:
        _require_flags(ptype, flags, 0x02)
        packet_id = _check_packet_id(body.u16())
        topics = []
        while body.remaining():
            pattern = body.string()
            qos = body.u8()
            if qos > 2:
                raise MalformedPacketError(f"invalid requested QoS: {qos}")
            topics.append((pattern, qos))
        if not topics:
            raise MalformedPacketError("SUBSCRIBE with empty filter list")
        return Subscribe(packet_id=packet_id, topics=topics)
    if ptype == SUBACK:
        _require_flags(ptype, flags, 0)
        packet_id = _check_packet_id(body.u16())
        codes = list(body.take(body.remaining()))
        if not codes:
            raise MalformedPacketError("SUBACK with no return codes")
        for code in codes:
            if code not in (0, 1, 2, SUBACK_FAILURE):
                raise MalformedPacketError(f"invalid SUBACK return code: {code}")
        return Suback(packet_id=packet_id, return_codes=codes)
    if ptype == UNSUBSCRIBE:
        _require_flags(ptype, flags, 0x02)
        packet_id = _check_packet_id(body.u16())
        topics = []
        while body.remaining():
            topics.append(body.string())
        if not topics:
            raise MalformedPacketError("UNSUBSCRIBE with empty filter list")
        return Unsubscribe(packet_id=packet_id, topics=topics)
    if ptype == UNSUBACK:
        _require_flags(ptype, flags, 0)
        return Unsuback(packet_id=_check_packet_id(body.u16()))
    if ptype == PINGREQ:
        _require_flags(ptype, flags, 0)
        return Pingreq()
    if ptype == PINGRESP:
        _require_flags(ptype, flags, 0)
        return Pingresp()
    if ptype == DISCONNECT:
        _require_flags(ptype, flags, 0)
        return Disconnect()
    raise UnsupportedPacketError(f"unsupported packet type {ptype}")


def read_packet(recv_exact, max_body: int = 1 << 20) -> Packet:
    """Read one packet from a stream via `recv_exact(n) -> bytes`.

    `recv_exact` must return exactly n bytes or raise. `max_body` bounds the
    declared remaining length (DoS guard for a desk-scale broker).
    """
    header = bytearray(recv_exact(1))
    for _ in range(4):
        header += recv_exact(1)
        if not header[-1] & 0x80:
            break
    else:
        raise MalformedPacketError("remaining length exceeds 4 bytes")
    length, body_start = decode_remaining_length(bytes(header), 1)
    if length > max_body:
        raise MalformedPacketError(f"packet body {length} exceeds limit {max_body}")
    body = recv_exact(length) if length else b""
    packet, _ = decode_packet_from(bytes(header) + body)
    return packet


class StreamClosed(Exception):
    """Peer closed the connection."""


class PacketStream:
    """Buffered packet reader over a socket: one recv can yield many packets,
    cutting syscalls and thread wakeups on busy connections."""

    def __init__(self, sock, max_body: int = 1 << 20, chunk: int = 65536):
        self._sock = sock
        self._max_body = max_body
        self._chunk = chunk
        self._buf = bytearray()
        self._pos = 0

    def _fill(self):
        data = self._sock.recv(self._chunk)
        if not data:
            raise StreamClosed()
        if self._pos:
            del self._buf[:self._pos]
            self._pos = 0
        self._buf += data

    def _next_from_buffer(self) -> Packet | None:
        buf = self._buf
        pos = self._pos
        avail = len(buf) - pos
        if avail < 2:
            return None
        length = 0
        multiplier = 1
        header_len = 1
        ok = False
        for i in range(4):
            if pos + 1 + i >= len(buf):
                break
            byte = buf[pos + 1 + i]
            length += (byte & 0x7F) * multiplier
            header_len += 1
            if not byte & 0x80:
                ok = True
                break
            multiplier *= 128
        else:
            raise MalformedPacketError("remaining length exceeds 4 bytes")
        if not ok:
            return None
        if length > self._max_body:
            raise MalformedPacketError(
                f"packet body {length} exceeds limit {self._max_body}")
        total = header_len + length
        if avail < total:
            return None
        frame = bytes(buf[pos:pos + total])
        self._pos = pos + total
        packet, _ = decode_packet_from(frame)
        return packet

    def read_packet(self) -> Packet:
        while True:
            packet = self._next_from_buffer()
            if packet is not None:
                return packet
            self._fill()

    def read_available(self) -> list[Packet]:
        """All complete packets currently buffered; blocks only when empty."""
        while True:
            out = []
            packet = self._next_from_buffer()
            while packet is not None:
                out.append(packet)
                packet = self._next_from_buffer()
            if out:
                return out
            self._fill()
