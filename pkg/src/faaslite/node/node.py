"""One node: registry + scheduler + worker pool + bus, wired together.

A node owns a connection to the shared state tier (or an embedded store
when standalone), advertises itself to peers through it, and routes
every call through the same path whether the call arrived over HTTP,
over the bus from a peer, or from a guest chaining into a new call:

    record created -> placement decision -> local queue | forward

Call ids are 31-bit ints with the node's ordinal in the top byte, so
ids minted by different nodes never collide and a record's origin is
readable straight off its id.
"""

from __future__ import annotations

import threading
import time

from ..errors import (NotFoundError, StateError, TransportError,
                      UnknownCallError)
from ..scheduler import COLD_START, EXECUTE_LOCAL, SHARE, Scheduler
from ..state import LocalTier, StateBackend, InprocHandle, RemoteHandle
from . import bus as bus_mod
from .config import NodeConfig
from .executor import Executor
from .http_api import HttpApi
from .objectstore import FunctionStore
from .records import QUEUED, CallRecord, RecordStore

_POLL_S = 0.005


class CallIds:
    """31-bit call ids: ``ordinal << 24 | sequence`` (sequence skips 0)."""

    def __init__(self, ordinal: int):
        self._ordinal = (ordinal & 0x7F) << 24
        self._mu = threading.Lock()
        self._seq = 0

    def next(self) -> int:
        with self._mu:
            self._seq = (self._seq % 0xFFFFFF) + 1
            return self._ordinal | self._seq


class _Chainer:
    """What a running guest sees when it chains calls.  Bound to the
    calling user so a guest cannot invoke across namespaces."""

    __slots__ = ("node", "user")

    def __init__(self, node, user):
        self.node = node
        self.user = user

    def chain(self, name: str, payload: bytes) -> int:
        rec = self.node.new_record(self.user, name)
        self.node.dispatch(rec, payload, hops=0)
        return rec.call_id

    def wait(self, call_id: int) -> int:
        rec = self.node.wait_for(call_id,
                                 self.node.config.sync_timeout_s)
        if rec is None or not rec.finished or rec.return_code is None:
            return -1
        return rec.return_code

    def output(self, call_id: int):
        try:
            rec = self.node.records.get(call_id)
        except UnknownCallError:
            handle = self.node.executor.handle_for(call_id)
            if handle is None or not handle.done:
                return None
            rec = handle.record
        if not rec.finished:
            return None
        return rec.output


class Node:
    def __init__(self, config: NodeConfig | None = None, *,
                 handle=None, with_http: bool = True, clock=time.time):
        self.config = config if config is not None else NodeConfig()
        self.node_id = self.config.node_id
        if handle is None:
            if self.config.state_host:
                handle = RemoteHandle(self.config.state_host,
                                      self.config.state_port)
            else:
                handle = InprocHandle(StateBackend())
        self.handle = handle
        self.tier = LocalTier(handle, chunk_size=self.config.chunk_size,
                              mode=self.config.state_mode)
        self.records = RecordStore(handle, ttl_s=self.config.record_ttl_s)
        self.scheduler = Scheduler(
            self.node_id, handle, capacity=self.config.capacity,
            heartbeat_s=self.config.heartbeat_s,
            evict_ttl_s=self.config.evict_ttl_s, clock=clock)
        self.store = FunctionStore(self.config.store_dir or None, self.tier)
        self.ids = CallIds(self.config.ordinal)
        self.executor = Executor(self, workers=self.config.workers)
        self.bus = bus_mod.BusServer(self, self.config.bus_host,
                                     self.config.bus_port)
        self.http = HttpApi(self) if with_http else None
        self._housekeeper = threading.Thread(
            target=self._housekeeping, name=f"{self.node_id}-keeper",
            daemon=True)
        self._stop = threading.Event()
        self._started = False

    # ---------------------------------------------------------- lifecycle

    def start(self) -> "Node":
        self.executor.start()
        self.bus.start()
        if self.http is not None:
            self.http.start()
        try:
            self.scheduler.register_address(
                bus=self.bus.address,
                http=self.http.address if self.http else "")
            self.scheduler.heartbeat()
        except (StateError, TransportError):
            pass                    # tier down: keep serving locally
        self._housekeeper.start()
        self._started = True
        return self

    def stop(self) -> None:
        self._stop.set()
        self.executor.stop()
        self.bus.stop()
        if self.http is not None:
            self.http.stop()
        self.scheduler.retire()
        if self._started and self._housekeeper.is_alive():
            self._housekeeper.join(timeout=2.0)

    def _housekeeping(self) -> None:
        while not self._stop.wait(self.config.heartbeat_s):
            try:
                self.scheduler.heartbeat()
            except (StateError, TransportError):
                pass
            self.executor.evict_idle(self.config.evict_ttl_s)

    # ------------------------------------------------------------- upload

    def upload(self, user: str, name: str, raw: bytes, **limits):
        return self.store.upload(user, name, raw, **limits)

    # ------------------------------------------------------------- invoke

    def new_record(self, user: str, name: str) -> CallRecord:
        rec = CallRecord(self.ids.next(), user, name, status=QUEUED,
                         node=self.node_id, ttl_s=self.config.record_ttl_s)
        self.records.put(rec)
        return rec

    def invoke(self, user: str, name: str, payload: bytes, *,
               wait_s: float | None = None) -> CallRecord:
        """Entry point used by the HTTP API and the CLI.  ``wait_s``
        None means fire-and-return (async); a number means block up to
        that long for a terminal record."""
        self.store.manifest(user, name)   # unknown function fails fast
        rec = self.new_record(user, name)
        return self.dispatch(rec, payload, hops=0, wait_s=wait_s)

    def dispatch(self, rec: CallRecord, payload: bytes, *, hops: int,
                 wait_s: float | None = None) -> CallRecord:
        placement = self.scheduler.decide(
            rec.user, rec.name, rec.call_id, hops=hops,
            warm_local=self.executor.is_warm(rec.user, rec.name),
            active_local=self.executor.active_total())

        if placement.action == SHARE:
            done = self._forward(rec, payload, placement.target,
                                 hops, wait_s)
            if done is not None:
                return done
            # fall through: peer unreachable, run it ourselves

        handle = self.executor.submit(rec, payload)
        if wait_s is None:
            return rec
        final = self.executor.run_until(lambda: handle.done, wait_s)
        return handle.record if final else rec

    def _forward(self, rec, payload, target, hops, wait_s):
        """Hand the call to a peer.  None means it was NOT handed off
        (peer unknown/unreachable) and running locally is safe."""
        addr = self.scheduler.address_of(target, "bus")
        if addr is None:
            return None
        header = {"call_id": rec.call_id, "user": rec.user,
                  "name": rec.name, "hops": hops + 1}
        try:
            _, result = bus_mod.forward_call(
                addr, header, payload, wait=wait_s is not None,
                timeout_s=wait_s if wait_s is not None
                else self.config.sync_timeout_s)
        except TransportError:
            return None
        if wait_s is None or result is None:
            # handed off; refresh what we can and report current truth
            try:
                return self.records.get(rec.call_id)
            except (UnknownCallError, StateError, TransportError):
                return rec
        hdr, output = result
        rec.status = hdr["status"]
        rec.return_code = hdr["return_code"]
        rec.error = hdr.get("error", "")
        rec.output = output
        rec.node = target
        return rec

    def accept_forwarded(self, header: dict, payload: bytes):
        """Bus entry: a peer handed us a call it minted."""
        call_id = int(header["call_id"])
        try:
            rec = self.records.get(call_id)
        except UnknownCallError:
            rec = CallRecord(call_id, header["user"], header["name"],
                             status=QUEUED, node=self.node_id,
                             ttl_s=self.config.record_ttl_s)
            self.records.put(rec)
        hops = int(header.get("hops", 1))
        placement = self.scheduler.decide(
            rec.user, rec.name, rec.call_id, hops=hops,
            warm_local=self.executor.is_warm(rec.user, rec.name),
            active_local=self.executor.active_total())
        if placement.action == SHARE:
            forwarded = self._forward(rec, payload, placement.target,
                                      hops, None)
            if forwarded is not None:
                # hand back a latch that follows the remote record
                return _RemoteFollower(self, rec.call_id)
        return self.executor.submit(rec, payload)

    # -------------------------------------------------------------- waits

    def wait_for(self, call_id: int, timeout_s: float):
        """Terminal record for a call, or None on timeout.  Blocked
        worker threads drain the queue while they wait."""
        handle = self.executor.handle_for(call_id)
        if handle is not None:
            if self.executor.run_until(lambda: handle.done, timeout_s):
                return handle.record
            return None
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            try:
                rec = self.records.get(call_id)
            except (UnknownCallError, StateError, TransportError):
                rec = None
            if rec is not None and rec.finished:
                return rec
            time.sleep(_POLL_S)
        return None

    def status(self, call_id: int) -> CallRecord:
        handle = self.executor.handle_for(call_id)
        if handle is not None and handle.done:
            return handle.record
        return self.records.get(call_id)

    def chainer_for(self, user: str) -> _Chainer:
        return _Chainer(self, user)

    # -------------------------------------------------------------- stats

    def stats(self) -> dict:
        ex = self.executor
        return {
            "node_id": self.node_id,
            "executor": dict(ex.stats),
            "active": ex.active_total(),
            "meter": ex.meter.snapshot(),
            "billable_gb_s": ex.meter.total_gb_s(),
            "state_bytes_sent": self.tier.bytes_sent,
            "state_bytes_received": self.tier.bytes_received,
        }


class _RemoteFollower:
    """CallHandle-alike for a call we forwarded onward: completion is
    whatever the tier's record says."""

    __slots__ = ("node", "call_id")

    def __init__(self, node, call_id):
        self.node = node
        self.call_id = call_id

    def wait(self, timeout_s: float):
        return self.node.wait_for(self.call_id, timeout_s)

    @property
    def done(self) -> bool:
        try:
            return self.node.records.get(self.call_id).finished
        except (UnknownCallError, StateError, TransportError):
            return False
