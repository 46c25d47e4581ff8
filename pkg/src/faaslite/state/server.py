"""TCP server for the shared tier: one thread per connection, frames in,
frames out.  All the semantics live in the backend; this file only
shuttles."""

from __future__ import annotations

import socket
import socketserver
import struct
import threading

from . import wire
from .backend import StateBackend


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        backend: StateBackend = self.server.backend
        while True:
            try:
                body = wire.read_frame(self.request)
            except (ConnectionError, ValueError, OSError):
                return
            if body is None:
                return
            try:
                resp = self._dispatch(backend, body)
            except Exception:
                resp = wire.encode_response(wire.ST_INTERNAL)
            try:
                self.request.sendall(resp)
            except OSError:
                return

    @staticmethod
    def _dispatch(backend: StateBackend, body: bytes) -> bytes:
        try:
            opcode, key, offset, payload = wire.decode_request(body)
        except (ValueError, UnicodeDecodeError):
            return wire.encode_response(wire.ST_BAD_REQUEST)

        if opcode == wire.OP_READ:
            if len(payload) != 4:
                return wire.encode_response(wire.ST_BAD_REQUEST)
            (length,) = struct.unpack(">I", payload)
            status, data = backend.read(key, offset, length)
            return wire.encode_response(status, data)
        if opcode == wire.OP_WRITE:
            status, _ = backend.write(key, offset, payload)
            return wire.encode_response(status)
        if opcode == wire.OP_APPEND:
            status, _ = backend.append(key, payload)
            return wire.encode_response(status)
        if opcode == wire.OP_READAPP:
            if len(payload) != 4:
                return wire.encode_response(wire.ST_BAD_REQUEST)
            (length,) = struct.unpack(">I", payload)
            status, data = backend.read_appended(key, length)
            return wire.encode_response(status, data)
        if opcode == wire.OP_SIZE:
            status, n = backend.size(key)
            return wire.encode_response(
                status, struct.pack(">Q", n) if status == wire.ST_OK else b"")
        if opcode in (wire.OP_LOCKR, wire.OP_LOCKW):
            mode = "r" if opcode == wire.OP_LOCKR else "w"
            status, token = backend.lock(key, mode, offset / 1000.0)
            return wire.encode_response(
                status,
                struct.pack(">Q", token) if status == wire.ST_OK else b"")
        if opcode == wire.OP_UNLOCK:
            status, _ = backend.unlock(key, offset)
            return wire.encode_response(status)
        return wire.encode_response(wire.ST_BAD_REQUEST)


class StateServer:
    """The shared tier bound to a TCP port.  ``port=0`` picks one."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 backend: StateBackend | None = None):
        self.backend = backend if backend is not None else StateBackend()

        class _Srv(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._srv = _Srv((host, port), _Handler)
        self._srv.backend = self.backend
        self.host, self.port = self._srv.server_address
        self._thread: threading.Thread | None = None

    def start(self) -> "StateServer":
        self._thread = threading.Thread(target=self._srv.serve_forever,
                                        name="state-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._srv.shutdown()
        self._srv.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
