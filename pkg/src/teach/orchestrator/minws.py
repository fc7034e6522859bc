"""Minimal RFC 6455 WebSocket server and client (text frames, no extensions).

Enough protocol for the dashboard bridge: HTTP upgrade handshake, masked
client frames, ping/pong, close handshake, and continuation-frame
reassembly. The server can also serve static files (the dashboard bundle)
on non-upgrade GET requests.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import os
import socket
import struct
import threading
from pathlib import Path
from urllib.parse import urlparse

log = logging.getLogger("teach.ws")

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class WsError(Exception):
    pass


class WsClosed(WsError):
    pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise WsClosed("socket closed")
        buf += chunk
    return bytes(buf)


def _encode_frame(opcode: int, payload: bytes, mask: bool) -> bytes:
    header = bytearray([0x80 | opcode])
    length = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if length < 126:
        header.append(mask_bit | length)
    elif length < 1 << 16:
        header.append(mask_bit | 126)
        header += struct.pack(">H", length)
    else:
        header.append(mask_bit | 127)
        header += struct.pack(">Q", length)
    if mask:
        key = os.urandom(4)
        header += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(header) + payload


class _WsBase:
    """Shared frame pump over a connected socket."""

    def __init__(self, sock: socket.socket, mask_outbound: bool):
        self._sock = sock
        self._mask_outbound = mask_outbound
        self._send_lock = threading.Lock()
        self._closed = threading.Event()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def _send_frame(self, opcode: int, payload: bytes):
        if self._closed.is_set():
            raise WsClosed("connection closed")
        data = _encode_frame(opcode, payload, self._mask_outbound)
        with self._send_lock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                self.close()
                raise WsClosed(str(exc)) from exc

    def send_text(self, text: str):
        self._send_frame(OP_TEXT, text.encode("utf-8"))

    def recv_text(self, timeout: float | None = None) -> str | None:
        """Next text message; None once the connection is closed."""
        self._sock.settimeout(timeout)
        fragments: list[bytes] = []
        try:
            while True:
                first2 = _recv_exact(self._sock, 2)
                fin = bool(first2[0] & 0x80)
                opcode = first2[0] & 0x0F
                masked = bool(first2[1] & 0x80)
                length = first2[1] & 0x7F
                if length == 126:
                    length = struct.unpack(">H", _recv_exact(self._sock, 2))[0]
                elif length == 127:
                    length = struct.unpack(">Q", _recv_exact(self._sock, 8))[0]
                key = _recv_exact(self._sock, 4) if masked else None
                payload = _recv_exact(self._sock, length) if length else b""
                if key is not None:
                    payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
                if opcode == OP_PING:
                    self._send_frame(OP_PONG, payload)
                    continue
                if opcode == OP_PONG:
                    continue
                if opcode == OP_CLOSE:
                    try:
                        self._send_frame(OP_CLOSE, b"")
                    except WsClosed:
                        pass
                    self.close()
                    return None
                if opcode in (OP_TEXT, OP_BINARY, OP_CONT):
                    fragments.append(payload)
                    if fin:
                        return b"".join(fragments).decode("utf-8")
                    continue
                raise WsError(f"unsupported opcode {opcode}")
        except (WsClosed, OSError):
            self.close()
            return None

    def close(self):
        if self._closed.is_set():
            return
        self._closed.set()
        try:
            self._sock.close()
        except OSError:
            pass


class ServerConnection(_WsBase):
    def __init__(self, sock: socket.socket, path: str):
        super().__init__(sock, mask_outbound=False)
        self.path = path


class WsServer:
    """Accepts upgrades on ws_path, serves static files elsewhere."""

    def __init__(self, host: str, port: int, handler, ws_path: str = "/ws",
                 static_dir: str | None = None):
        self.handler = handler
        self.ws_path = ws_path
        self.static_dir = Path(static_dir) if static_dir else None
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self.host, self.port = self._listener.getsockname()[:2]
        self._stopping = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self) -> "WsServer":
        self._thread.start()
        return self

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_one, args=(sock,), daemon=True).start()

    def _serve_one(self, sock: socket.socket):
        try:
            sock.settimeout(10.0)
            request = b""
            while b"\r\n\r\n" not in request:
                chunk = sock.recv(4096)
                if not chunk:
                    return
                request += chunk
                if len(request) > 64 * 1024:
                    return
            head = request.split(b"\r\n\r\n", 1)[0].decode("utf-8", "replace")
            lines = head.split("\r\n")
            method, path, _ = lines[0].split(" ", 2)
            headers = {}
            for line in lines[1:]:
                if ":" in line:
                    name, value = line.split(":", 1)
                    headers[name.strip().lower()] = value.strip()
            if (method == "GET" and headers.get("upgrade", "").lower() == "websocket"
                    and path == self.ws_path):
                key = headers.get("sec-websocket-key", "")
                accept = base64.b64encode(
                    hashlib.sha1((key + _GUID).encode()).digest()).decode()
                sock.sendall((
                    "HTTP/1.1 101 Switching Protocols\r\n"
                    "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                    f"Sec-WebSocket-Accept: {accept}\r\n\r\n").encode())
                sock.settimeout(None)
                self.handler(ServerConnection(sock, path))
                return
            self._serve_static(sock, method, path)
        except (OSError, ValueError) as exc:
            log.debug("ws connection error: %s", exc)
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def _serve_static(self, sock: socket.socket, method: str, path: str):
        def respond(status: str, body: bytes, ctype: str = "text/plain"):
            sock.sendall((f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
                          f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n"
                          ).encode() + body)

        if method != "GET" or self.static_dir is None:
            respond("404 Not Found", b"not found")
            return
        rel = path.split("?", 1)[0].lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            respond("404 Not Found", b"not found")
            return
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        respond("200 OK", target.read_bytes(), ctype)

    def stop(self):
        self._stopping.set()
        try:
            self._listener.close()
        except OSError:
            pass


class WsClient(_WsBase):
    """Test/CLI-side client for the bridge endpoint."""

    def __init__(self, url: str, timeout: float = 10.0):
        parsed = urlparse(url)
        if parsed.scheme != "ws":
            raise WsError(f"only ws:// urls supported, got {url!r}")
        sock = socket.create_connection((parsed.hostname, parsed.port or 80),
                                        timeout=timeout)
        super().__init__(sock, mask_outbound=True)
        key = base64.b64encode(os.urandom(16)).decode()
        path = parsed.path or "/"
        sock.sendall((
            f"GET {path} HTTP/1.1\r\nHost: {parsed.hostname}:{parsed.port}\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n").encode())
        response = b""
        while b"\r\n\r\n" not in response:
            chunk = sock.recv(4096)
            if not chunk:
                raise WsError("server closed during handshake")
            response += chunk
        status = response.split(b"\r\n", 1)[0].decode()
        if "101" not in status:
            raise WsError(f"handshake rejected: {status}")
        expected = base64.b64encode(hashlib.sha1((key + _GUID).encode()).digest()).decode()
        if expected.encode() not in response:
            raise WsError("bad Sec-WebSocket-Accept")
