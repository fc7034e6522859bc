"""In-process MQTT 3.1.1 subset broker.

One reader and one writer thread per session; a shared subscription table
guarded by a lock (exclusive mutation, snapshot reads); a housekeeping thread
for QoS 1 retransmission and keepalive enforcement. Sessions are always
clean: all state is dropped on disconnect.

Transports: TCP (``start`` binds a listener) and in-process loopback
(``connect_pipe`` hands back one end of a socketpair), byte-identical on the
wire so embedded and external deployments behave the same.
"""

from __future__ import annotations

import collections
import logging
import socket
import threading
import time
from dataclasses import dataclass

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
from .topics import InvalidFilterError, match_levels, validate_filter

log = logging.getLogger("teach.bus.broker")

_DEDUPE_WINDOW = 4096


@dataclass
class BrokerLimits:
    max_payload: int = 256 * 1024
    ack_timeout: float = 2.0
    max_retries: int = 5
    connect_timeout: float = 10.0


class _SocketClosed(Exception):
    pass


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise _SocketClosed()
        buf += chunk
    return bytes(buf)


class _Session:
    def __init__(self, broker: "Broker", sock: socket.socket, peer: str):
        self.broker = broker
        self.sock = sock
        self.peer = peer
        self.client_id = ""
        self.keepalive = 0
        self.subscriptions: dict[str, tuple[list[str], int]] = {}  # pattern -> (levels, qos)
        self.lock = threading.Lock()
        self.pending_acks: dict[int, dict] = {}
        self._next_pid = 1
        self._send_lock = threading.Lock()
        self.last_rx = time.monotonic()
        self.closed = threading.Event()
        self._recent_acked: collections.OrderedDict[int, None] = collections.OrderedDict()
        self.reader = threading.Thread(target=self._read_loop, daemon=True)

    def start(self):
        self.reader.start()

    # outbound ----------------------------------------------------------
    # Sends happen directly on the calling thread under a per-session lock:
    # client readers always drain their sockets, so sendall cannot deadlock,
    # and skipping a writer-thread handoff keeps loop latency down.

    def _send_bytes(self, data: bytes):
        if self.closed.is_set():
            return
        try:
            with self._send_lock:
                self.sock.sendall(data)
        except OSError:
            self.close()

    def _alloc_pid(self) -> int:
        for _ in range(65535):
            pid = self._next_pid
            self._next_pid = pid % 65535 + 1
            if pid not in self.pending_acks:
                return pid
        raise RuntimeError("no free packet ids (QoS 1 window exhausted)")

    def deliver(self, topic: str, payload: bytes, qos: int,
                encoded_qos0: bytes | None = None, sink: dict | None = None):
        """Encode a delivery; appended to `sink` (flushed as one write per
        session after the inbound batch) or sent immediately."""
        if qos == 0:
            data = (encoded_qos0 if encoded_qos0 is not None else
                    packets.encode_packet(Publish(topic=topic, payload=payload, qos=0)))
        else:
            with self.lock:
                if self.closed.is_set():
                    return
                pid = self._alloc_pid()
                pub = Publish(topic=topic, payload=payload, qos=1, packet_id=pid)
                self.pending_acks[pid] = {
                    "packet": pub,
                    "attempts": 0,
                    "deadline": time.monotonic() + self.broker.limits.ack_timeout,
                }
            data = packets.encode_packet(pub)
        if sink is None:
            self._send_bytes(data)
        else:
            sink.setdefault(self, bytearray()).extend(data)

    def retransmit_due(self, now: float):
        due = []
        with self.lock:
            for pid, rec in self.pending_acks.items():
                if now >= rec["deadline"]:
                    rec["attempts"] += 1
                    if rec["attempts"] > self.broker.limits.max_retries:
                        log.warning("%s: QoS1 pid=%d unacked after %d retries, closing",
                                    self.client_id, pid, self.broker.limits.max_retries)
                        self.close()
                        return
                    rec["deadline"] = now + self.broker.limits.ack_timeout
                    pub = rec["packet"]
                    due.append(Publish(topic=pub.topic, payload=pub.payload, qos=1,
                                       packet_id=pid, dup=True))
        for pub in due:
            self._send_bytes(packets.encode_packet(pub))

    # inbound -----------------------------------------------------------

    def _read_loop(self):
        stream = packets.PacketStream(self.sock, max_body=self._max_body())
        try:
            self.sock.settimeout(self.broker.limits.connect_timeout)
            first = stream.read_packet()
            if not isinstance(first, Connect):
                log.warning("%s: first packet was %s, closing", self.peer, type(first).__name__)
                self.close()
                return
            if first.protocol_level != packets.PROTOCOL_LEVEL:
                self._send_bytes(packets.encode_packet(
                    Connack(return_code=packets.CONNACK_REFUSED_PROTOCOL)))
                time.sleep(0.05)
                self.close()
                return
            self.client_id = first.client_id or self.broker._anon_id()
            self.keepalive = first.keepalive
            self.broker._register(self)
            self._send_bytes(packets.encode_packet(Connack(session_present=False)))
            self.last_rx = time.monotonic()
            self.sock.settimeout(None)
            while not self.closed.is_set():
                batch = stream.read_available()
                self.last_rx = time.monotonic()
                sink: dict[_Session, bytearray] = {}
                for packet in batch:
                    self._handle(packet, sink)
                for session, data in sink.items():
                    session._send_bytes(bytes(data))
        except (_SocketClosed, packets.StreamClosed):
            self.close()
        except (packets.CodecError, socket.timeout, OSError) as exc:
            if not self.closed.is_set():
                log.warning("%s: closing on %s: %s", self.client_id or self.peer,
                            type(exc).__name__, exc)
            self.close()

    def _max_body(self) -> int:
        return self.broker.limits.max_payload + 64 * 1024

    def _reply(self, data: bytes, sink: dict | None):
        if sink is None:
            self._send_bytes(data)
        else:
            sink.setdefault(self, bytearray()).extend(data)

    def _handle(self, packet, sink: dict | None = None):
        if isinstance(packet, Publish):
            self._handle_publish(packet, sink)
        elif isinstance(packet, Puback):
            with self.lock:
                self.pending_acks.pop(packet.packet_id, None)
        elif isinstance(packet, Subscribe):
            codes = []
            with self.broker._lock:
                for pattern, qos in packet.topics:
                    try:
                        validate_filter(pattern)
                    except InvalidFilterError:
                        codes.append(packets.SUBACK_FAILURE)
                        continue
                    granted = min(qos, 1)
                    self.subscriptions[pattern] = (pattern.split("/"), granted)
                    codes.append(granted)
            self._reply(packets.encode_packet(Suback(packet.packet_id, codes)), sink)
        elif isinstance(packet, Unsubscribe):
            with self.broker._lock:
                for pattern in packet.topics:
                    self.subscriptions.pop(pattern, None)
            self._reply(packets.encode_packet(Unsuback(packet.packet_id)), sink)
        elif isinstance(packet, Pingreq):
            self._reply(packets.encode_packet(Pingresp()), sink)
        elif isinstance(packet, Disconnect):
            self.close()
        else:
            # CONNACK/SUBACK/etc. from a client are protocol violations.
            log.warning("%s: unexpected %s, closing", self.client_id, type(packet).__name__)
            self.close()

    def _handle_publish(self, pub: Publish, sink: dict | None = None):
        if len(pub.payload) > self.broker.limits.max_payload:
            log.warning("%s: payload %d over limit, closing", self.client_id, len(pub.payload))
            self.close()
            return
        if pub.qos == 0:
            self.broker._route(pub.topic, pub.payload, 0, sink)
            return
        pid = pub.packet_id
        duplicate = pub.dup and pid in self._recent_acked
        if not duplicate:
            self.broker._route(pub.topic, pub.payload, 1, sink)
            self._recent_acked[pid] = None
            while len(self._recent_acked) > _DEDUPE_WINDOW:
                self._recent_acked.popitem(last=False)
        self._reply(packets.encode_packet(Puback(pid)), sink)

    def close(self):
        if self.closed.is_set():
            return
        self.closed.set()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass
        self.broker._unregister(self)


class Broker:
    """Broker handle: start(), stop(), connect_pipe(), endpoint."""

    def __init__(self, host: str = "127.0.0.1", port: int | None = 1883,
                 limits: BrokerLimits | None = None):
        self.host = host
        self.port = port
        self.limits = limits or BrokerLimits()
        self._listener: socket.socket | None = None
        self._sessions: list[_Session] = []
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        self._anon_counter = 0
        self._threads: list[threading.Thread] = []

    def start(self) -> "Broker":
        if self.port is not None:
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            listener.bind((self.host, self.port))
            listener.listen(64)
            self.port = listener.getsockname()[1]
            self._listener = listener
            accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
            accept_thread.start()
            self._threads.append(accept_thread)
        housekeeping = threading.Thread(target=self._housekeeping_loop, daemon=True)
        housekeeping.start()
        self._threads.append(housekeeping)
        log.info("broker listening on %s", self.endpoint if self._listener else "loopback only")
        return self

    @property
    def endpoint(self) -> tuple[str, int]:
        if self._listener is None:
            raise RuntimeError("broker has no TCP listener")
        return (self.host, self.port)

    def connect_pipe(self) -> socket.socket:
        """Open an in-process session; returns the client end of the pipe."""
        server_end, client_end = socket.socketpair()
        self._spawn_session(server_end, "pipe")
        return client_end

    def _spawn_session(self, sock: socket.socket, peer: str):
        session = _Session(self, sock, peer)
        session.start()

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._spawn_session(sock, f"{addr[0]}:{addr[1]}")

    def _housekeeping_loop(self):
        while not self._stopping.is_set():
            interval = min(self.limits.ack_timeout / 4.0, 0.25)
            time.sleep(max(interval, 0.005))
            now = time.monotonic()
            with self._lock:
                sessions = list(self._sessions)
            for session in sessions:
                session.retransmit_due(now)
                if session.keepalive and now - session.last_rx > 1.5 * session.keepalive:
                    log.warning("%s: keepalive expired, closing", session.client_id)
                    session.close()

    def _anon_id(self) -> str:
        with self._lock:
            self._anon_counter += 1
            return f"anon-{self._anon_counter}"

    def _register(self, session: _Session):
        stale = None
        with self._lock:
            for existing in self._sessions:
                if existing.client_id == session.client_id:
                    stale = existing
                    break
            self._sessions.append(session)
        if stale is not None:
            log.info("client id %r taken over, closing previous session", session.client_id)
            stale.close()

    def _unregister(self, session: _Session):
        with self._lock:
            try:
                self._sessions.remove(session)
            except ValueError:
                pass

    def _route(self, topic: str, payload: bytes, qos: int, sink: dict | None = None):
        tlevels = topic.split("/")
        with self._lock:
            targets = []
            for session in self._sessions:
                best = -1
                for flevels, granted in session.subscriptions.values():
                    if granted > best and match_levels(flevels, tlevels):
                        best = granted
                if best >= 0:
                    targets.append((session, min(qos, best)))
        encoded_qos0 = None
        if any(out_qos == 0 for _, out_qos in targets):
            encoded_qos0 = packets.encode_packet(Publish(topic=topic, payload=payload, qos=0))
        for session, out_qos in targets:
            session.deliver(topic, payload, out_qos, encoded_qos0, sink)

    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)

    def stop(self):
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._lock:
            sessions = list(self._sessions)
        for session in sessions:
            session.close()
