"""The authoritative key/value store behind the shared tier.

One instance holds every global value, the append logs, and the global
lock table.  It is used two ways: wrapped by the TCP server when nodes
are distributed, or called directly through
:class:`~faaslite.state.client.InprocHandle` when everything lives in
one process.  All methods are thread-safe and speak in status codes
rather than exceptions so the wire layer can forward results verbatim.

Global locks are leases: a holder that sits on a lock longer than the
lease is silently expired so one crashed node cannot wedge a key
forever.  The late unlock then reports ``LEASE_EXPIRED``.
"""

from __future__ import annotations

import itertools
import threading
import time

from .wire import (ST_BAD_REQUEST, ST_BUSY, ST_LEASE_EXPIRED, ST_MODE_ERROR,
                   ST_NOT_FOUND, ST_OK, ST_RANGE, WRITE_WHOLE)

DEFAULT_LEASE_S = 2.0


class _LockState:
    __slots__ = ("mode", "holders", "cond")

    def __init__(self, cond):
        self.mode = None          # None | "r" | "w"
        self.holders = {}         # token -> expiry deadline
        self.cond = cond


class StateBackend:
    def __init__(self, lease_s: float = DEFAULT_LEASE_S, *, clock=time.monotonic):
        self._values: dict[str, bytearray] = {}
        self._appends: dict[str, list[bytes]] = {}
        self._mu = threading.Lock()
        self._locks: dict[str, _LockState] = {}
        self._lock_cond = threading.Condition(self._mu)
        self._tokens = itertools.count(1)
        self.lease_s = lease_s
        self.clock = clock

    # -- data ------------------------------------------------------------
    def read(self, key: str, offset: int, length: int):
        with self._mu:
            buf = self._values.get(key)
            if buf is None:
                if key in self._appends:
                    return ST_MODE_ERROR, b""
                return ST_NOT_FOUND, b""
            if offset > len(buf):
                return ST_RANGE, b""
            return ST_OK, bytes(buf[offset:offset + length])

    def write(self, key: str, offset: int, data: bytes):
        with self._mu:
            if offset == WRITE_WHOLE:
                self._values[key] = bytearray(data)
                return ST_OK, b""
            buf = self._values.get(key)
            if buf is None:
                buf = self._values[key] = bytearray()
            end = offset + len(data)
            if end > len(buf):
                buf.extend(bytes(end - len(buf)))
            buf[offset:end] = data
            return ST_OK, b""

    def append(self, key: str, data: bytes):
        with self._mu:
            self._appends.setdefault(key, []).append(bytes(data))
            return ST_OK, b""

    def read_appended(self, key: str, length: int):
        with self._mu:
            log = self._appends.get(key)
            if log is None:
                if key in self._values:
                    return ST_MODE_ERROR, b""
                return ST_NOT_FOUND, b""
            out = b"".join(log)
            return ST_OK, out[:length]

    def size(self, key: str):
        with self._mu:
            buf = self._values.get(key)
            if buf is None:
                return ST_NOT_FOUND, 0
            return ST_OK, len(buf)

    def delete(self, key: str) -> None:
        with self._mu:
            self._values.pop(key, None)
            self._appends.pop(key, None)

    def keys(self, prefix: str = "") -> list[str]:
        with self._mu:
            return sorted(k for k in self._values if k.startswith(prefix))

    # -- global locks -------------------------------------------------------
    def _purge_expired(self, ls: _LockState) -> None:
        now = self.clock()
        dead = [t for t, exp in ls.holders.items() if exp <= now]
        for t in dead:
            del ls.holders[t]
        if not ls.holders:
            ls.mode = None

    def _lock_state(self, key: str) -> _LockState:
        ls = self._locks.get(key)
        if ls is None:
            ls = self._locks[key] = _LockState(self._lock_cond)
        return ls

    def lock(self, key: str, mode: str, timeout_s: float):
        """Acquire the key's global lock.  Returns (status, token)."""
        deadline = self.clock() + timeout_s
        with self._mu:
            ls = self._lock_state(key)
            while True:
                self._purge_expired(ls)
                free = ls.mode is None
                shareable = mode == "r" and ls.mode == "r"
                if free or shareable:
                    token = next(self._tokens)
                    ls.mode = mode
                    ls.holders[token] = self.clock() + self.lease_s
                    return ST_OK, token
                remaining = deadline - self.clock()
                if remaining <= 0:
                    return ST_BUSY, 0
                # wake early enough to notice a lease expiring
                soonest = min(ls.holders.values(), default=deadline)
                self._lock_cond.wait(
                    min(remaining, max(soonest - self.clock(), 0.01)))

    def unlock(self, key: str, token: int):
        with self._mu:
            ls = self._locks.get(key)
            if ls is None:
                return ST_BAD_REQUEST, b""
            self._purge_expired(ls)
            if token not in ls.holders:
                return ST_LEASE_EXPIRED, b""
            del ls.holders[token]
            if not ls.holders:
                ls.mode = None
            self._lock_cond.notify_all()
            return ST_OK, b""

    def lock_mode(self, key: str):
        """Current mode for introspection: None, 'r', or 'w'."""
        with self._mu:
            ls = self._locks.get(key)
            if ls is None:
                return None
            self._purge_expired(ls)
            return ls.mode
