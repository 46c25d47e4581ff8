"""Per-call context: everything a host call can touch.

One context is attached to a faaslet for the duration of a call (and
across calls when the faaslet is kept warm — state mappings survive,
input/output do not).  The executor wires in the chaining callbacks;
tests swap pieces freely.
"""

from __future__ import annotations

import random
import threading
import time

from .vfs import VirtualFS

DEFAULT_NET_RATE = 1 << 20       # bytes/second through guest sockets
DEFAULT_NET_BURST = 64 * 1024


class TokenBucket:
    """Classic token bucket; ``take`` grants what it can, never blocks."""

    def __init__(self, rate: float, burst: float, *, clock=time.monotonic):
        self.rate = float(rate)
        self.burst = float(burst)
        self.clock = clock
        self._tokens = float(burst)
        self._last = clock()
        self._mu = threading.Lock()

    def take(self, wanted: int) -> int:
        with self._mu:
            now = self.clock()
            self._tokens = min(self.burst,
                               self._tokens + (now - self._last) * self.rate)
            self._last = now
            granted = int(min(wanted, self._tokens))
            self._tokens -= granted
            return granted


class FDEntry:
    __slots__ = ("kind", "obj", "pos", "flags")

    def __init__(self, kind: str, obj=None, flags: int = 0):
        self.kind = kind          # "stdin" | "stdout" | "stderr" |
        self.obj = obj            # "dir" | "file" | "socket"
        self.pos = 0
        self.flags = flags


class FDTable:
    def __init__(self):
        self._fds: dict[int, FDEntry] = {
            0: FDEntry("stdin"),
            1: FDEntry("stdout"),
            2: FDEntry("stderr"),
            3: FDEntry("dir", "/"),       # preopened root
        }
        self._next = 4

    def get(self, fd: int) -> FDEntry | None:
        return self._fds.get(fd)

    def add(self, entry: FDEntry) -> int:
        fd = self._next
        self._next += 1
        self._fds[fd] = entry
        return fd

    def close(self, fd: int) -> bool:
        e = self._fds.pop(fd, None)
        if e is None:
            return False
        if e.kind == "socket" and e.obj is not None:
            try:
                e.obj.close()
            except OSError:
                pass
        return True

    def renumber(self, fd_from: int, fd_to: int) -> bool:
        e = self._fds.get(fd_from)
        if e is None:
            return False
        self.close(fd_to)
        self._fds[fd_to] = e
        del self._fds[fd_from]
        return True

    def close_all(self):
        for fd in list(self._fds):
            if fd > 3:
                self.close(fd)


class CallContext:
    """Host-side state for one running call."""

    def __init__(self, faaslet, tier, *, user: str = "", call_id: int = 0,
                 input_data: bytes = b"", vfs: VirtualFS | None = None,
                 chainer=None, net_allow=None, net_rate: float = DEFAULT_NET_RATE,
                 net_burst: float = DEFAULT_NET_BURST, clock=time.monotonic,
                 rng: random.Random | None = None):
        self.faaslet = faaslet
        self.tier = tier
        self.user = user
        self.call_id = call_id
        self.input = bytes(input_data)
        self.output = bytearray()
        self.stdout = bytearray()
        self.vfs = vfs if vfs is not None else VirtualFS()
        self.fds = FDTable()
        self.chainer = chainer          # duck: chain(name, input)->id,
                                        # wait(id)->rc, output(id)->bytes
        self.net_allow = net_allow      # None = deny all; list of (host, port)
        self.bucket = TokenBucket(net_rate, net_burst, clock=clock)
        self.clock = clock
        self.rng = rng if rng is not None else random.Random()
        self.mapped: dict[str, str] = {}       # state key -> region tag
        self.held_locks: dict[tuple, int] = {} # (key, mode) -> token
        if faaslet is not None:
            faaslet.ctx = self

    # -- lifecycle ----------------------------------------------------------
    def begin_call(self, call_id: int, input_data: bytes) -> None:
        """Reset per-call fields, keep mappings and the tier cache."""
        self.call_id = call_id
        self.input = bytes(input_data)
        self.output = bytearray()

    def forget_mappings(self) -> None:
        self.mapped.clear()

    def release_held_locks(self) -> None:
        """Safety net: drop global locks a trap left behind."""
        for (key, mode), token in list(self.held_locks.items()):
            try:
                self.tier.unlock_global(key, token)
            except Exception:
                pass
        self.held_locks.clear()

    def close(self) -> None:
        self.release_held_locks()
        self.fds.close_all()
