"""MQTT 3.1.1 subset client.

Background reader thread; ``publish``/``subscribe`` callable from any thread;
received messages land on a single consumer queue in arrival order. QoS 1
publish blocks until PUBACK, retransmitting with DUP on timeout.
"""

from __future__ import annotations

import collections
import logging
import queue
import socket
import threading
import time

from . import packets
from .packets import (
    Connack,
    Connect,
    Disconnect,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Subscribe,
    Suback,
    Unsubscribe,
    Unsuback,
)
from .broker import _SocketClosed
from . import schema
from .schema import Envelope
from .topics import validate_filter, validate_topic

log = logging.getLogger("teach.bus.client")

_DEDUPE_WINDOW = 4096


class ClientError(Exception):
    pass


class ConnectRefusedError(ClientError):
    def __init__(self, return_code: int):
        super().__init__(f"broker refused connection (return code {return_code})")
        self.return_code = return_code


class ConnectionLostError(ClientError):
    pass


class AckTimeoutError(ClientError):
    """No acknowledgment after the configured retries."""


class SubscribeError(ClientError):
    """Broker rejected the subscription (SUBACK failure code)."""


class Client:
    def __init__(self, client_id: str, keepalive: int = 60,
                 ack_timeout: float = 2.0, max_retries: int = 5,
                 on_message=None):
        """`on_message(envelope)`, when set, is invoked on the reader thread
        instead of queueing — a low-latency path for in-process modules.
        Without it, envelopes land on `self.messages` in arrival order."""
        self.client_id = client_id
        self.keepalive = keepalive
        self.ack_timeout = ack_timeout
        self.max_retries = max_retries
        self.on_message = on_message
        self.messages: "queue.Queue[Envelope]" = queue.Queue()
        self._cork_buf: bytearray | None = None
        self._sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[int, dict] = {}
        self._next_pid = 1
        self._closed = threading.Event()
        self._connack: "queue.Queue[Connack]" = queue.Queue()
        self._recent_acked: collections.OrderedDict[int, None] = collections.OrderedDict()
        self._last_tx = 0.0
        self._reader: threading.Thread | None = None
        self._pinger: threading.Thread | None = None

    # connection ---------------------------------------------------------

    def connect_tcp(self, host: str, port: int, timeout: float = 10.0) -> "Client":
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return self.connect_socket(sock, timeout=timeout)

    def connect_socket(self, sock: socket.socket, timeout: float = 10.0) -> "Client":
        """Complete the CONNECT handshake over an established socket.

        Accepts TCP sockets and broker loopback pipes alike.
        """
        self._sock = sock
        self._send(packets.encode_packet(Connect(
            client_id=self.client_id, keepalive=self.keepalive, clean_session=True)))
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        try:
            ack = self._connack.get(timeout=timeout)
        except queue.Empty:
            self.close()
            raise ConnectionLostError("no CONNACK from broker") from None
        if ack.return_code != packets.CONNACK_ACCEPTED:
            self.close()
            raise ConnectRefusedError(ack.return_code)
        if self.keepalive:
            self._pinger = threading.Thread(target=self._ping_loop, daemon=True)
            self._pinger.start()
        return self

    def disconnect(self):
        if self._sock is not None and not self._closed.is_set():
            try:
                self._send(packets.encode_packet(Disconnect()))
            except (OSError, ConnectionLostError):
                pass
        self.close()

    def close(self):
        if self._closed.is_set():
            return
        self._closed.set()
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass
        with self._pending_lock:
            for rec in self._pending.values():
                rec["error"] = ConnectionLostError("connection closed")
                rec["event"].set()
            self._pending.clear()

    @property
    def connected(self) -> bool:
        return self._sock is not None and not self._closed.is_set()

    # wire helpers ---------------------------------------------------------

    def _send(self, data: bytes, corkable: bool = False):
        if self._closed.is_set():
            raise ConnectionLostError("client is closed")
        with self._send_lock:
            if corkable and self._cork_buf is not None:
                self._cork_buf.extend(data)
                return
            if self._cork_buf:
                data = bytes(self._cork_buf) + data
                self._cork_buf.clear()
            try:
                self._sock.sendall(data)
            except OSError as exc:
                self.close()
                raise ConnectionLostError(str(exc)) from exc
            self._last_tx = time.monotonic()

    def _flush_cork(self):
        with self._send_lock:
            if not self._cork_buf:
                self._cork_buf = None
                return
            data = bytes(self._cork_buf)
            self._cork_buf = None
            try:
                self._sock.sendall(data)
            except OSError as exc:
                self.close()
                raise ConnectionLostError(str(exc)) from exc
            self._last_tx = time.monotonic()

    def _alloc_pending(self, kind: str) -> tuple[int, dict]:
        with self._pending_lock:
            for _ in range(65535):
                pid = self._next_pid
                self._next_pid = pid % 65535 + 1
                if pid not in self._pending:
                    rec = {"kind": kind, "event": threading.Event(),
                           "result": None, "error": None}
                    self._pending[pid] = rec
                    return pid, rec
        raise ClientError("no free packet ids")

    def _finish_pending(self, pid: int, kind: str, result):
        with self._pending_lock:
            rec = self._pending.get(pid)
            if rec is not None and rec["kind"] == kind:
                rec["result"] = result
                rec["event"].set()
                del self._pending[pid]

    # operations ----------------------------------------------------------

    def publish(self, topic: str, payload: bytes, qos: int = 0):
        """Publish; returns after PUBACK for QoS 1, immediately for QoS 0."""
        validate_topic(topic)
        if qos not in (0, 1):
            raise ClientError(f"qos must be 0 or 1, got {qos}")
        if len(payload) > schema.MAX_PAYLOAD_BYTES:
            raise ClientError(f"payload {len(payload)} bytes over the envelope limit")
        if qos == 0:
            self._send(packets.encode_packet(Publish(topic=topic, payload=payload, qos=0)),
                       corkable=True)
            return
        pid, rec = self._alloc_pending("puback")
        for attempt in range(self.max_retries + 1):
            self._send(packets.encode_packet(Publish(
                topic=topic, payload=payload, qos=1, packet_id=pid, dup=attempt > 0)))
            if rec["event"].wait(timeout=self.ack_timeout):
                if rec["error"] is not None:
                    raise rec["error"]
                return
        with self._pending_lock:
            self._pending.pop(pid, None)
        raise AckTimeoutError(
            f"no PUBACK for {topic!r} after {self.max_retries} retries")

    def publish_envelope(self, envelope: Envelope):
        self.publish(envelope.topic, envelope.payload, envelope.qos)

    def publish_many(self, items: list[tuple[str, bytes]]):
        """QoS 0 batch: all frames go out in one socket write (one wire
        packet each; per-publisher order preserved)."""
        frames = []
        for topic, payload in items:
            validate_topic(topic)
            if len(payload) > schema.MAX_PAYLOAD_BYTES:
                raise ClientError(f"payload {len(payload)} bytes over the envelope limit")
            frames.append(packets.encode_packet(Publish(topic=topic, payload=payload, qos=0)))
        if frames:
            self._send(b"".join(frames), corkable=True)

    def subscribe(self, pattern: str, qos: int = 0, timeout: float | None = None) -> int:
        """Subscribe; returns the granted QoS (<= requested)."""
        validate_filter(pattern)
        pid, rec = self._alloc_pending("suback")
        self._send(packets.encode_packet(Subscribe(packet_id=pid, topics=[(pattern, qos)])))
        if not rec["event"].wait(timeout=timeout or self.ack_timeout * (self.max_retries + 1)):
            with self._pending_lock:
                self._pending.pop(pid, None)
            raise AckTimeoutError(f"no SUBACK for {pattern!r}")
        if rec["error"] is not None:
            raise rec["error"]
        code = rec["result"][0]
        if code == packets.SUBACK_FAILURE:
            raise SubscribeError(f"broker rejected subscription {pattern!r}")
        return code

    def unsubscribe(self, pattern: str, timeout: float | None = None):
        pid, rec = self._alloc_pending("unsuback")
        self._send(packets.encode_packet(Unsubscribe(packet_id=pid, topics=[pattern])))
        if not rec["event"].wait(timeout=timeout or self.ack_timeout * (self.max_retries + 1)):
            with self._pending_lock:
                self._pending.pop(pid, None)
            raise AckTimeoutError(f"no UNSUBACK for {pattern!r}")
        if rec["error"] is not None:
            raise rec["error"]

    def receive(self, timeout: float | None = None) -> Envelope | None:
        """Next envelope in arrival order, or None on timeout/closed."""
        try:
            return self.messages.get(timeout=timeout)
        except queue.Empty:
            return None

    # background ----------------------------------------------------------

    def _read_loop(self):
        stream = packets.PacketStream(self._sock)
        try:
            while not self._closed.is_set():
                batch = stream.read_available()
                if self.on_message is not None and len(batch) > 1:
                    # cork QoS 0 publishes made by callbacks: the whole
                    # batch's output leaves in one write
                    with self._send_lock:
                        self._cork_buf = bytearray()
                    try:
                        for packet in batch:
                            self._dispatch(packet)
                    finally:
                        self._flush_cork()
                else:
                    for packet in batch:
                        self._dispatch(packet)
        except (_SocketClosed, packets.StreamClosed, OSError, packets.CodecError) as exc:
            if not self._closed.is_set():
                log.debug("%s: reader exiting: %s", self.client_id, exc)
            self.close()

    def _dispatch(self, packet):
        if isinstance(packet, Publish):
            self._on_publish(packet)
        elif isinstance(packet, Puback):
            self._finish_pending(packet.packet_id, "puback", True)
        elif isinstance(packet, Suback):
            self._finish_pending(packet.packet_id, "suback", packet.return_codes)
        elif isinstance(packet, Unsuback):
            self._finish_pending(packet.packet_id, "unsuback", True)
        elif isinstance(packet, Connack):
            self._connack.put(packet)
        elif isinstance(packet, Pingresp):
            pass
        elif isinstance(packet, Pingreq):
            self._send(packets.encode_packet(Pingresp()))
        else:
            log.warning("%s: unexpected %s from broker", self.client_id, type(packet).__name__)

    def _deliver(self, envelope: Envelope):
        if self.on_message is not None:
            try:
                self.on_message(envelope)
            except Exception:
                log.exception("%s: on_message callback failed", self.client_id)
        else:
            self.messages.put(envelope)

    def _on_publish(self, pub: Publish):
        if pub.qos == 0:
            self._deliver(Envelope(topic=pub.topic, payload=pub.payload, qos=0))
            return
        duplicate = pub.dup and pub.packet_id in self._recent_acked
        if not duplicate:
            self._deliver(Envelope(topic=pub.topic, payload=pub.payload, qos=1,
                                   dup=pub.dup))
            self._recent_acked[pub.packet_id] = None
            while len(self._recent_acked) > _DEDUPE_WINDOW:
                self._recent_acked.popitem(last=False)
        self._send(packets.encode_packet(Puback(pub.packet_id)))

    def _ping_loop(self):
        while not self._closed.is_set():
            time.sleep(max(self.keepalive / 4.0, 0.1))
            if self._closed.is_set():
                return
            if time.monotonic() - self._last_tx > self.keepalive / 2.0:
                try:
                    self._send(packets.encode_packet(Pingreq()))
                except ConnectionLostError:
                    return
