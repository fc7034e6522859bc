"""WebSocket bridge between the bus and the dashboard.

Downstream: every `teaching/#` envelope fans out to all connected sockets as
a {"topic","payload"} JSON frame. Upstream: only `teaching/ui/#` frames are
republished on the bus; anything else gets an error frame back and the
connection stays open. Slow consumers drop oldest frames rather than stall
the loop.
"""

from __future__ import annotations

import collections
import json
import logging
import threading

from ..bus import Client
from ..bus import schema
from ..bus.topics import InvalidTopicError, topic_matches, validate_topic
from ..jsonutil import dumps_canonical
from .minws import ServerConnection, WsClosed, WsServer

log = logging.getLogger("teach.bridge")

OUTBOUND_QUEUE_LIMIT = 2048


class _Downstream:
    """One connected dashboard: bounded queue plus writer thread."""

    def __init__(self, conn: ServerConnection):
        self.conn = conn
        self.queue: collections.deque = collections.deque(maxlen=OUTBOUND_QUEUE_LIMIT)
        self.ready = threading.Condition()
        self.dropped = 0
        self.writer = threading.Thread(target=self._write_loop, daemon=True)
        self.writer.start()

    def offer(self, frame: str):
        with self.ready:
            if len(self.queue) == self.queue.maxlen:
                self.dropped += 1
            self.queue.append(frame)
            self.ready.notify()

    def _write_loop(self):
        while not self.conn.closed:
            with self.ready:
                while not self.queue and not self.conn.closed:
                    self.ready.wait(timeout=0.5)
                if self.conn.closed:
                    return
                frame = self.queue.popleft()
            try:
                self.conn.send_text(frame)
            except WsClosed:
                return


class Bridge:
    """Bridge handle: owns a bus client and a WebSocket server."""

    def __init__(self, client: Client, host: str = "127.0.0.1", port: int = 8787,
                 static_dir: str | None = None):
        self.client = client
        self.client.subscribe(schema.ALL_TOPICS_FILTER)
        self.server = WsServer(host, port, self._on_connection, ws_path="/ws",
                               static_dir=static_dir)
        self._downstreams: list[_Downstream] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._pump = threading.Thread(target=self._pump_loop, daemon=True)

    @property
    def endpoint(self) -> tuple[str, int]:
        return (self.server.host, self.server.port)

    def start(self) -> "Bridge":
        self.server.start()
        self._pump.start()
        log.info("bridge listening on ws://%s:%d/ws", *self.endpoint)
        return self

    def _pump_loop(self):
        """Bus -> all dashboards."""
        while not self._stop.is_set():
            envelope = self.client.receive(timeout=0.2)
            if envelope is None:
                continue
            try:
                payload = envelope.json()
            except schema.SchemaError:
                log.warning("skipping non-JSON payload on %s", envelope.topic)
                continue
            frame = dumps_canonical({"topic": envelope.topic, "payload": payload},
                                    floats="repr")
            with self._lock:
                targets = list(self._downstreams)
            for downstream in targets:
                downstream.offer(frame)

    def _on_connection(self, conn: ServerConnection):
        """Dashboard -> bus (runs on the connection's accept thread)."""
        downstream = _Downstream(conn)
        with self._lock:
            self._downstreams.append(downstream)
        log.info("dashboard connected (%d active)", len(self._downstreams))
        try:
            while not self._stop.is_set():
                text = conn.recv_text(timeout=None)
                if text is None:
                    return
                self._handle_upstream(conn, text)
        finally:
            conn.close()
            with self._lock:
                if downstream in self._downstreams:
                    self._downstreams.remove(downstream)
            log.info("dashboard disconnected (%d active)", len(self._downstreams))

    def _handle_upstream(self, conn: ServerConnection, text: str):
        def reject(message: str):
            try:
                conn.send_text(dumps_canonical({"error": message}))
            except WsClosed:
                pass

        try:
            frame = json.loads(text)
        except json.JSONDecodeError as exc:
            reject(f"malformed frame: {exc}")
            return
        if not isinstance(frame, dict) or "topic" not in frame or "payload" not in frame:
            reject("frame must be an object with 'topic' and 'payload'")
            return
        topic = frame["topic"]
        try:
            validate_topic(topic)
        except InvalidTopicError as exc:
            reject(str(exc))
            return
        if not topic_matches(schema.UI_FILTER, topic):
            reject(f"upstream publishing restricted to {schema.UI_FILTER}")
            return
        if not isinstance(frame["payload"], dict):
            reject("payload must be a JSON object")
            return
        payload = dumps_canonical(frame["payload"], floats="repr").encode("utf-8")
        self.client.publish(topic, payload)

    def stop(self):
        self._stop.set()
        self.server.stop()
        with self._lock:
            for downstream in self._downstreams:
                downstream.conn.close()
            self._downstreams.clear()
        self.client.disconnect()
