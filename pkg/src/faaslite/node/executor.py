"""The worker pool: queues calls, keeps sandboxes warm, runs them.

A call accepted for local execution lands in a FIFO queue serviced by a
fixed set of worker threads.  Each (user, name) keeps a warm pool of
idle sandboxes; acquiring one rewinds it to the function's snapshot
(dirty pages only) instead of building a fresh instance, which is where
the cold-start win comes from.  The first cold start of a function runs
its init entry once, captures the snapshot, and publishes it so every
later start — here or on another node — is a restore.

Two details matter for liveness:

* A guest awaiting a chained call would otherwise pin its worker while
  the child sits in the queue behind it.  ``run_until`` lets a blocked
  worker execute queued calls while it waits, so chains make progress
  with any pool size.
* Sandboxes whose init maps shared regions cannot be snapshotted (the
  image would alias another sandbox's bytes); those functions simply
  cold-start every time and are never pooled.
"""

from __future__ import annotations

import queue
import threading
import time

from ..errors import (FaasliteError, NotFoundError, SnapshotMismatchError,
                      StateError)
from ..hostiface import CallContext
from ..sandbox import Faaslet
from ..snapshot import Snapshot, capture, fetch, publish, reset, restore
from . import records as rec_mod
from .metering import Meter

_IDLE_POLL_S = 0.002


class CallHandle:
    """Completion latch for one locally executing call."""

    __slots__ = ("call_id", "record", "_event")

    def __init__(self, record):
        self.call_id = record.call_id
        self.record = record
        self._event = threading.Event()

    def finish(self, record) -> None:
        self.record = record
        self._event.set()

    def wait(self, timeout_s: float):
        """Record once terminal, else None."""
        if self._event.wait(timeout_s):
            return self.record
        return None

    @property
    def done(self) -> bool:
        return self._event.is_set()


class _WarmEntry:
    __slots__ = ("faaslet", "digest", "idle_since")

    def __init__(self, faaslet, digest, now):
        self.faaslet = faaslet
        self.digest = digest
        self.idle_since = now


class Executor:
    def __init__(self, node, workers: int = 4):
        self.node = node
        self.store = node.store
        self.tier = node.tier
        self.records = node.records
        self.meter = Meter()
        self._queue: queue.Queue = queue.Queue()
        self._pools: dict[tuple, list] = {}      # (user,name) -> [_WarmEntry]
        self._pool_mu = threading.Lock()
        self._active: dict[tuple, int] = {}
        self._active_total = 0
        self._snapshots: dict[str, Snapshot] = {}     # digest -> snapshot
        self._uncapturable: set = set()               # digests
        self._snap_mu = threading.Lock()
        self._handles: dict[int, CallHandle] = {}
        self._handles_mu = threading.Lock()
        self._stopping = threading.Event()
        self.stats = {"cold_starts": 0, "warm_hits": 0, "restores": 0,
                      "resets": 0, "pages_rewritten": 0, "executed": 0,
                      "failed": 0}
        self._stats_mu = threading.Lock()
        self._workers = [
            threading.Thread(target=self._worker_loop,
                             name=f"worker-{i}", daemon=True)
            for i in range(workers)
        ]

    def start(self):
        for t in self._workers:
            t.start()
        return self

    def stop(self, drain_s: float = 5.0) -> None:
        deadline = time.monotonic() + drain_s
        while time.monotonic() < deadline:
            with self._pool_mu:
                idle = self._active_total == 0
            if idle and self._queue.empty():
                break
            time.sleep(0.01)
        self._stopping.set()
        # unblock workers stuck on the queue
        for _ in self._workers:
            self._queue.put(None)

    # ------------------------------------------------------------ submit

    def submit(self, record, input_data: bytes) -> CallHandle:
        handle = CallHandle(record)
        with self._handles_mu:
            self._handles[record.call_id] = handle
            self._prune_handles()
        self._queue.put((record, bytes(input_data), handle))
        return handle

    def handle_for(self, call_id: int):
        with self._handles_mu:
            return self._handles.get(call_id)

    def _prune_handles(self, keep: int = 4096) -> None:
        # bounded memory; records in the tier remain the durable copy
        if len(self._handles) <= keep:
            return
        done = [cid for cid, h in self._handles.items() if h.done]
        done.sort()
        for cid in done[:len(self._handles) - keep]:
            del self._handles[cid]

    def active_total(self) -> int:
        with self._pool_mu:
            return self._active_total

    def active_for(self, user: str, name: str) -> int:
        with self._pool_mu:
            return self._active.get((user, name), 0)

    def warm_for(self, user: str, name: str) -> int:
        with self._pool_mu:
            return len(self._pools.get((user, name), ()))

    def is_warm(self, user: str, name: str) -> bool:
        with self._pool_mu:
            key = (user, name)
            return bool(self._pools.get(key)) or self._active.get(key, 0) > 0

    # ----------------------------------------------------------- workers

    def _worker_loop(self) -> None:
        while not self._stopping.is_set():
            item = self._queue.get()
            if item is None:
                break
            record, data, handle = item
            self._run_one(record, data, handle)

    def run_until(self, pred, timeout_s: float) -> bool:
        """Service the queue from the calling thread until ``pred()``.

        Used by a worker that must block (awaiting a chained call): it
        keeps draining work so the thing it waits for can actually run.
        Returns pred()'s final truth."""
        deadline = time.monotonic() + timeout_s
        while not pred():
            if time.monotonic() >= deadline:
                return False
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                time.sleep(_IDLE_POLL_S)
                continue
            if item is None:        # shutdown marker: put it back, bail
                self._queue.put(None)
                return pred()
            record, data, handle = item
            self._run_one(record, data, handle)
        return True

    def _bump(self, key, delta: int) -> None:
        with self._pool_mu:
            self._active[key] = self._active.get(key, 0) + delta
            if self._active[key] <= 0:
                del self._active[key]
            self._active_total += delta

    def _note(self, stat: str, delta: int = 1) -> None:
        with self._stats_mu:
            self.stats[stat] += delta

    def _run_one(self, record, data: bytes, handle: CallHandle) -> None:
        key = (record.user, record.name)
        self._bump(key, +1)
        try:
            self.records.mark_running(record, self.node.node_id)
            faaslet, man = self._acquire(record.user, record.name)
        except FaasliteError as exc:
            self._bump(key, -1)
            self.records.mark_failed(record, str(exc))
            self._note("failed")
            handle.finish(record)
            return
        try:
            result = self._invoke(faaslet, man, record, data)
        finally:
            self._bump(key, -1)
        if result is not None and result.trap is None:
            # a nonzero return code is still a completed call; it is the
            # guest's value to report, not an infrastructure failure
            self.records.mark_done(record, result.return_code,
                                   bytes(result.output))
        self._note("executed")
        handle.finish(record)

    def _invoke(self, faaslet, man, record, data):
        ctx = CallContext(
            faaslet, self.tier, user=record.user, call_id=record.call_id,
            input_data=data, chainer=self.node.chainer_for(record.user),
            net_allow=self.node.config.net_allow or None,
            net_rate=self.node.config.net_rate,
            net_burst=self.node.config.net_burst)
        result = None
        try:
            result = faaslet.invoke(deadline_s=man.deadline_s,
                                    fuel=man.fuel)
            if result.trap is not None:
                self.records.mark_failed(
                    record, f"trap: {result.trap.kind}: {result.trap.detail}")
                self._note("failed")
        except FaasliteError as exc:
            self.records.mark_failed(record, str(exc))
            self._note("failed")
        finally:
            ctx.release_held_locks()
            ctx.close()
            if result is not None:
                self.meter.record(record.user, record.name,
                                  peak_bytes=faaslet.peak_bytes,
                                  wall_ns=result.wall_ns)
            self._release(record.user, record.name, man, faaslet,
                          healthy=result is not None and result.trap is None)
        return result

    # ------------------------------------------------- sandbox lifecycle

    def _acquire(self, user: str, name: str):
        """Warm sandbox if one matches the current version, else cold."""
        man = self.store.manifest(user, name)
        key = (user, name)
        now = time.monotonic()
        while True:
            with self._pool_mu:
                pool = self._pools.get(key)
                entry = pool.pop() if pool else None
            if entry is None:
                break
            if entry.digest != man.digest:
                continue            # stale version: drop, keep looking
            snap = self._snapshots.get(entry.digest)
            if snap is None:
                continue
            pages = reset(entry.faaslet, snap)
            self._note("warm_hits")
            self._note("resets")
            self._note("pages_rewritten", pages)
            return entry.faaslet, man
        faaslet = self._cold_start(man)
        self._note("cold_starts")
        if self.node.scheduler is not None:
            try:
                self.node.scheduler.register_warm(user, name)
            except (StateError, NotFoundError):
                pass
        return faaslet, man

    def _cold_start(self, man) -> Faaslet:
        cfn = self.store.compiled(man)
        snap = self._snapshot_for(man, cfn)
        if snap is not None:
            self._note("restores")
            return restore(cfn, snap)
        # un-capturable: fresh instance, init runs every time
        faaslet = Faaslet(cfn)
        self._run_init(faaslet, man)
        return faaslet

    def _snapshot_for(self, man, cfn):
        digest = man.digest
        with self._snap_mu:
            if digest in self._uncapturable:
                return None
            snap = self._snapshots.get(digest)
        if snap is not None:
            return snap
        with self._snap_mu:
            # re-check under the lock; build at most once per digest
            if digest in self._uncapturable:
                return None
            snap = self._snapshots.get(digest)
            if snap is not None:
                return snap
            snap = self._fetch_snapshot(man)
            if snap is None:
                snap = self._build_snapshot(man, cfn)
            if snap is None:
                self._uncapturable.add(digest)
                return None
            self._snapshots[digest] = snap
            return snap

    def _fetch_snapshot(self, man):
        handle = self.tier.handle
        if handle is None:
            return None
        try:
            snap = fetch(handle, man.user, man.name)
        except (NotFoundError, StateError):
            return None
        if snap.module_digest != man.digest:
            return None             # snapshot of an older version
        return snap

    def _build_snapshot(self, man, cfn):
        faaslet = Faaslet(cfn)
        self._run_init(faaslet, man)
        try:
            snap = capture(faaslet)
        except SnapshotMismatchError:
            return None
        handle = self.tier.handle
        if handle is not None:
            try:
                publish(handle, snap)
            except StateError:
                pass                # other nodes will build their own
        return snap

    def _run_init(self, faaslet, man) -> None:
        if not faaslet.cfn.has_init():
            return
        ctx = CallContext(faaslet, self.tier, user=man.user,
                          chainer=None)
        try:
            result = faaslet.invoke(entry="_faasm_init",
                                    deadline_s=man.deadline_s,
                                    fuel=man.fuel)
            if result.trap is not None:
                raise FaasliteError(
                    f"{man.user}/{man.name} init trapped: "
                    f"{result.trap.kind}: {result.trap.detail}")
            if result.return_code != 0:
                raise FaasliteError(
                    f"{man.user}/{man.name} init returned "
                    f"{result.return_code}")
        finally:
            ctx.release_held_locks()
            ctx.close()

    def _release(self, user, name, man, faaslet, *, healthy: bool) -> None:
        digest = man.digest
        with self._snap_mu:
            poolable = digest in self._snapshots
        if not poolable or not faaslet.guards_intact():
            return                  # dropped; GC reclaims the memory
        # A trapped call may leave any state; the snapshot reset on the
        # next acquire rewinds it, so the sandbox itself is still fine.
        del healthy
        entry = _WarmEntry(faaslet, digest, time.monotonic())
        with self._pool_mu:
            self._pools.setdefault((user, name), []).append(entry)

    # ----------------------------------------------------------- eviction

    def evict_idle(self, ttl_s: float) -> int:
        """Drop sandboxes idle past the TTL; deregister emptied sets."""
        cutoff = time.monotonic() - ttl_s
        emptied = []
        dropped = 0
        with self._pool_mu:
            for key, pool in list(self._pools.items()):
                keep = [e for e in pool if e.idle_since >= cutoff]
                dropped += len(pool) - len(keep)
                if keep:
                    self._pools[key] = keep
                else:
                    del self._pools[key]
                    if self._active.get(key, 0) == 0:
                        emptied.append(key)
        for user, name in emptied:
            if self.node.scheduler is not None:
                self.node.scheduler.deregister_warm(user, name)
        return dropped

    def drop_warm(self, user: str, name: str) -> int:
        """Forget every warm sandbox for one function (tests, upgrades)."""
        with self._pool_mu:
            pool = self._pools.pop((user, name), [])
        return len(pool)
