"""Node-to-node call forwarding.

One frame per message: ``[u32 BE length][u8 kind][payload]``.  A
forwarded call's payload is a JSON header (call id, function, hop count,
whether the sender wants to block for the result) length-prefixed with a
u16, followed by the raw input bytes.  Results travel the same way with
the output where the input was.

The exchange is a plain request/response on a fresh connection: the
sender writes SHARE_CALL, the receiver answers with ACK as soon as the
call is queued and — only when the sender asked to wait — a CALL_RESULT
frame once it finishes.  PING/PONG exists so a node can cheaply probe a
peer before trusting a stale warm-set entry.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading

from ..errors import TransportError

SHARE_CALL = 1
CALL_RESULT = 2
ACK = 3
PING = 4
PONG = 5
REFUSED = 6

MAX_FRAME = 256 * 1024 * 1024
CONNECT_TIMEOUT_S = 5.0


def _send_frame(sock, kind: int, payload: bytes) -> None:
    sock.sendall(struct.pack(">IB", 1 + len(payload), kind) + payload)


def _read_exact(sock, n: int):
    parts = []
    while n:
        chunk = sock.recv(min(n, 65536))
        if not chunk:
            if parts:
                raise ConnectionError("connection closed mid-frame")
            return None
        parts.append(chunk)
        n -= len(chunk)
    return b"".join(parts)


def _read_frame(sock):
    """(kind, payload) or None on clean EOF."""
    hdr = _read_exact(sock, 4)
    if hdr is None:
        return None
    (length,) = struct.unpack(">I", hdr)
    if not 1 <= length <= MAX_FRAME:
        raise TransportError(f"bad frame length {length}")
    body = _read_exact(sock, length)
    if body is None:
        raise ConnectionError("connection closed mid-frame")
    return body[0], body[1:]


def pack_call(header: dict, data: bytes) -> bytes:
    hdr = json.dumps(header).encode()
    return struct.pack(">H", len(hdr)) + hdr + data


def unpack_call(payload: bytes):
    (hlen,) = struct.unpack_from(">H", payload)
    header = json.loads(payload[2:2 + hlen].decode())
    return header, payload[2 + hlen:]


class BusServer:
    """Accepts forwarded calls and hands them to the owning node."""

    def __init__(self, node, host: str = "127.0.0.1", port: int = 0):
        self.node = node
        outer = self

        class _Handler(socketserver.BaseRequestHandler):
            def handle(self):
                try:
                    frame = _read_frame(self.request)
                except (ConnectionError, TransportError):
                    return
                if frame is None:
                    return
                kind, payload = frame
                if kind == PING:
                    _send_frame(self.request, PONG, b"")
                    return
                if kind != SHARE_CALL:
                    _send_frame(self.request, REFUSED,
                                json.dumps({"error": "bad kind"}).encode())
                    return
                outer._handle_share(self.request, payload)

        class _Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = _Server((host, port), _Handler)
        self.host, self.port = self._server.server_address
        self._thread = threading.Thread(
            target=self._server.serve_forever,
            name=f"bus:{self.port}", daemon=True)

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def _handle_share(self, sock, payload):
        try:
            header, data = unpack_call(payload)
            handle = self.node.accept_forwarded(header, data)
        except Exception as exc:  # refuse rather than drop the socket
            _send_frame(sock, REFUSED,
                        json.dumps({"error": str(exc)}).encode())
            return
        _send_frame(sock, ACK,
                    json.dumps({"call_id": header["call_id"]}).encode())
        if not header.get("wait"):
            return
        rec = handle.wait(self.node.config.sync_timeout_s)
        if rec is None:
            _send_frame(sock, REFUSED,
                        json.dumps({"error": "timeout",
                                    "call_id": header["call_id"]}).encode())
            return
        result_hdr = {"call_id": rec.call_id, "status": rec.status,
                      "return_code": rec.return_code, "error": rec.error}
        _send_frame(sock, CALL_RESULT, pack_call(result_hdr, rec.output))


def forward_call(addr, header: dict, data: bytes, *,
                 wait: bool, timeout_s: float):
    """Send one call to a peer.

    Returns ``(acked, result)``.  ``result`` is the (header, output)
    pair when ``wait`` was set and the peer finished in time; it is
    None when we did not wait, or when the peer acknowledged but went
    quiet — in that case the call IS running remotely and the caller
    must not re-run it.  TransportError is raised only before the
    acknowledgement, i.e. only while re-running locally is still safe.
    """
    host, port = addr
    header = dict(header, wait=bool(wait))
    try:
        sock = socket.create_connection((host, port),
                                        timeout=CONNECT_TIMEOUT_S)
    except OSError as exc:
        raise TransportError(f"bus connect {host}:{port}: {exc}") from None
    acked = False
    try:
        sock.settimeout(timeout_s + CONNECT_TIMEOUT_S)
        try:
            _send_frame(sock, SHARE_CALL, pack_call(header, data))
            frame = _read_frame(sock)
        except (OSError, ConnectionError) as exc:
            raise TransportError(
                f"bus i/o {host}:{port}: {exc}") from None
        if frame is None:
            raise TransportError("peer closed before acknowledging")
        kind, payload = frame
        if kind == REFUSED:
            raise TransportError(
                f"peer refused call: {payload.decode(errors='replace')}")
        if kind != ACK:
            raise TransportError(f"unexpected bus frame kind {kind}")
        acked = True
        if not wait:
            return True, None
        try:
            frame = _read_frame(sock)
        except (OSError, ConnectionError):
            return True, None       # accepted; result must come via records
        if frame is None:
            return True, None
        kind, payload = frame
        if kind != CALL_RESULT:
            return True, None       # peer timed out on its side
        return True, unpack_call(payload)
    finally:
        sock.close()


def ping(addr, timeout_s: float = 1.0) -> bool:
    try:
        with socket.create_connection(addr, timeout=timeout_s) as sock:
            sock.settimeout(timeout_s)
            _send_frame(sock, PING, b"")
            frame = _read_frame(sock)
            return frame is not None and frame[0] == PONG
    except (OSError, ConnectionError, TransportError):
        return False
