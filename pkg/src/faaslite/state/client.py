"""Handles onto the shared tier.

Both handle flavours expose the same verbs and the same byte counters,
so the caching layer neither knows nor cares whether the authoritative
store is across a socket or in this very process.  Counters measure
*data* payload bytes only — key names, offsets, lock tokens and other
framing are not the interesting number when comparing state-sharing
strategies.
"""

from __future__ import annotations

import socket
import struct
import threading

from ..errors import (LeaseExpiredError, ModeError, NotFoundError,
                      RangeError, StateError, TransportError)
from . import wire
from .backend import StateBackend

_ERRORS = {
    wire.ST_NOT_FOUND: NotFoundError,
    wire.ST_RANGE: RangeError,
    wire.ST_MODE_ERROR: ModeError,
    wire.ST_LEASE_EXPIRED: LeaseExpiredError,
}


def _raise_for(status: int, key: str):
    exc = _ERRORS.get(status)
    if exc is not None:
        raise exc(key)
    raise StateError(f"{wire.STATUS_NAMES.get(status, status)}: {key}")


class _Counters:
    def __init__(self):
        self.bytes_sent = 0
        self.bytes_received = 0
        self.ops = 0

    def reset_counters(self):
        self.bytes_sent = 0
        self.bytes_received = 0
        self.ops = 0


class InprocHandle(_Counters):
    """Direct calls into a backend living in this process."""

    def __init__(self, backend: StateBackend):
        super().__init__()
        self.backend = backend

    def read(self, key: str, offset: int, length: int) -> bytes:
        self.ops += 1
        status, data = self.backend.read(key, offset, length)
        if status != wire.ST_OK:
            _raise_for(status, key)
        self.bytes_received += len(data)
        return data

    def write(self, key: str, offset: int, data: bytes) -> None:
        self.ops += 1
        status, _ = self.backend.write(key, offset, bytes(data))
        if status != wire.ST_OK:
            _raise_for(status, key)
        self.bytes_sent += len(data)

    def write_whole(self, key: str, data: bytes) -> None:
        self.write(key, wire.WRITE_WHOLE, data)

    def append(self, key: str, data: bytes) -> None:
        self.ops += 1
        status, _ = self.backend.append(key, bytes(data))
        if status != wire.ST_OK:
            _raise_for(status, key)
        self.bytes_sent += len(data)

    def read_appended(self, key: str, length: int) -> bytes:
        self.ops += 1
        status, data = self.backend.read_appended(key, length)
        if status != wire.ST_OK:
            _raise_for(status, key)
        self.bytes_received += len(data)
        return data

    def size(self, key: str) -> int:
        self.ops += 1
        status, n = self.backend.size(key)
        if status != wire.ST_OK:
            _raise_for(status, key)
        return n

    def lock(self, key: str, mode: str, timeout_s: float) -> int | None:
        """Returns the holder token, or None when the wait timed out."""
        self.ops += 1
        status, token = self.backend.lock(key, mode, timeout_s)
        if status == wire.ST_BUSY:
            return None
        if status != wire.ST_OK:
            _raise_for(status, key)
        return token

    def unlock(self, key: str, token: int) -> None:
        self.ops += 1
        status, _ = self.backend.unlock(key, token)
        if status != wire.ST_OK:
            _raise_for(status, key)

    def close(self):
        pass


class RemoteHandle(_Counters):
    """One framed TCP connection to a shared-tier server.

    Requests are serialized on the connection with a mutex; the runtime
    opens one handle per node, and chunk transfers dominate, so a single
    pipe is plenty.
    """

    def __init__(self, host: str, port: int, *, connect_timeout: float = 5.0):
        super().__init__()
        self.addr = (host, port)
        self._mu = threading.Lock()
        try:
            self._sock = socket.create_connection(self.addr,
                                                  timeout=connect_timeout)
            self._sock.settimeout(None)
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError as e:
            raise TransportError(f"shared tier at {host}:{port}: {e}") from e

    def _call(self, opcode: int, key: str, offset: int, payload: bytes):
        frame = wire.encode_request(opcode, key, offset, payload)
        with self._mu:
            try:
                self._sock.sendall(frame)
                body = wire.read_frame(self._sock)
            except (OSError, ConnectionError, ValueError) as e:
                raise TransportError(f"shared tier: {e}") from e
        if body is None or not body:
            raise TransportError("shared tier closed the connection")
        self.ops += 1
        return body[0], body[1:]

    def read(self, key: str, offset: int, length: int) -> bytes:
        status, data = self._call(wire.OP_READ, key, offset,
                                  struct.pack(">I", length))
        if status != wire.ST_OK:
            _raise_for(status, key)
        self.bytes_received += len(data)
        return data

    def write(self, key: str, offset: int, data: bytes) -> None:
        status, _ = self._call(wire.OP_WRITE, key, offset, bytes(data))
        if status != wire.ST_OK:
            _raise_for(status, key)
        self.bytes_sent += len(data)

    def write_whole(self, key: str, data: bytes) -> None:
        self.write(key, wire.WRITE_WHOLE, data)

    def append(self, key: str, data: bytes) -> None:
        status, _ = self._call(wire.OP_APPEND, key, 0, bytes(data))
        if status != wire.ST_OK:
            _raise_for(status, key)
        self.bytes_sent += len(data)

    def read_appended(self, key: str, length: int) -> bytes:
        status, data = self._call(wire.OP_READAPP, key, 0,
                                  struct.pack(">I", length))
        if status != wire.ST_OK:
            _raise_for(status, key)
        self.bytes_received += len(data)
        return data

    def size(self, key: str) -> int:
        status, data = self._call(wire.OP_SIZE, key, 0, b"")
        if status != wire.ST_OK:
            _raise_for(status, key)
        return struct.unpack(">Q", data)[0]

    def lock(self, key: str, mode: str, timeout_s: float) -> int | None:
        # a lock wait can block for its whole timeout; run it on a
        # throwaway connection so data ops are not stuck behind it
        opcode = wire.OP_LOCKR if mode == "r" else wire.OP_LOCKW
        frame = wire.encode_request(opcode, key, int(timeout_s * 1000), b"")
        try:
            with socket.create_connection(self.addr, timeout=timeout_s + 10.0) as s:
                s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                s.sendall(frame)
                body = wire.read_frame(s)
        except (OSError, ConnectionError, ValueError) as e:
            raise TransportError(f"shared tier: {e}") from e
        if not body:
            raise TransportError("shared tier closed the connection")
        self.ops += 1
        status, data = body[0], body[1:]
        if status == wire.ST_BUSY:
            return None
        if status != wire.ST_OK:
            _raise_for(status, key)
        return struct.unpack(">Q", data)[0]

    def unlock(self, key: str, token: int) -> None:
        status, _ = self._call(wire.OP_UNLOCK, key, token, b"")
        if status != wire.ST_OK:
            _raise_for(status, key)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass
