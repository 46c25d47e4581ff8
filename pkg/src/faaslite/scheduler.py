"""Placement decisions: keep calls warm, steal when local heat runs out.

Every node advertises itself in two places in the shared tier: a
heartbeat row under ``__sched/hosts`` proving it is alive, and a
per-function *warm set* under ``__sched/<user>/<name>`` listing the
nodes currently holding warm sandboxes for that function.  Scheduling a
call is then:

1. A call that has already bounced twice executes where it stands —
   warm if possible, cold if not.  No further forwarding, ever.
2. Warm sandbox here and spare capacity → run it here.
3. Someone else is warm and alive → forward to the rendezvous-hash
   winner among them (stable per call id, no coordination).
4. Warm here but saturated and nowhere better → queue here anyway.
5. Nothing warm anywhere → cold-start here and join the warm set.

If the shared tier cannot be reached, step 3 is skipped: a node that
cannot gossip degrades to running everything itself rather than
guessing at stale peers.

All structures are tiny JSON documents touched under the key's global
write lock, so the read-modify-write cycles of concurrent nodes
serialize cleanly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from hashlib import sha256

from .errors import NotFoundError, StateError, TransportError

HOSTS_KEY = "__sched/hosts"
ADDRS_KEY = "__sched/addrs"

EXECUTE_LOCAL = "execute-local"
SHARE = "share"
COLD_START = "cold-start-local"

MAX_HOPS = 2
DEFAULT_CAPACITY = 16
HEARTBEAT_INTERVAL_S = 1.0
EVICT_TTL_S = 30.0

_LOCK_TIMEOUT_S = 5.0
_DOC_LIMIT = 1 << 20


def warm_set_key(user: str, name: str) -> str:
    return f"__sched/{user}/{name}"


def rendezvous_pick(call_id: int, hosts) -> str:
    """Deterministic owner for this call among candidate hosts."""
    return max(sorted(hosts),
               key=lambda h: sha256(f"{call_id}|{h}".encode()).digest())


@dataclass
class Placement:
    action: str
    target: str | None = None
    reason: str = ""


class Scheduler:
    def __init__(self, node_id: str, handle, *,
                 capacity: int = DEFAULT_CAPACITY,
                 heartbeat_s: float = HEARTBEAT_INTERVAL_S,
                 evict_ttl_s: float = EVICT_TTL_S,
                 clock=time.time):
        self.node_id = node_id
        self.handle = handle
        self.capacity = capacity
        self.heartbeat_s = heartbeat_s
        self.evict_ttl_s = evict_ttl_s
        self.clock = clock

    # -- shared documents ------------------------------------------------
    def _read_doc(self, key: str) -> dict:
        try:
            raw = self.handle.read(key, 0, _DOC_LIMIT)
        except NotFoundError:
            return {}
        try:
            doc = json.loads(raw.decode())
        except (ValueError, UnicodeDecodeError):
            return {}
        return doc if isinstance(doc, dict) else {}

    def _update_doc(self, key: str, mutate) -> dict:
        """Read-modify-write under the key's global write lock."""
        token = self.handle.lock(key, "w", _LOCK_TIMEOUT_S)
        if token is None:
            raise StateError(f"could not lock {key!r}")
        try:
            doc = self._read_doc(key)
            doc = mutate(doc)
            self.handle.write_whole(key, json.dumps(doc).encode())
            return doc
        finally:
            try:
                self.handle.unlock(key, token)
            except StateError:
                pass

    # -- liveness ----------------------------------------------------------
    def heartbeat(self) -> None:
        now = self.clock()

        def bump(doc):
            doc[self.node_id] = now
            # prune rows nobody has refreshed in ages
            cutoff = now - 2 * self.evict_ttl_s
            return {h: t for h, t in doc.items()
                    if isinstance(t, (int, float)) and t >= cutoff}

        self._update_doc(HOSTS_KEY, bump)

    def register_address(self, *, bus: str = "", http: str = "") -> None:
        """Publish how to reach this node (``host:port`` strings)."""
        entry = {}
        if bus:
            entry["bus"] = bus
        if http:
            entry["http"] = http

        def put(doc):
            doc[self.node_id] = entry
            return doc

        self._update_doc(ADDRS_KEY, put)

    def address_of(self, host_id: str, kind: str = "bus"):
        """(host, port) for a peer, or None if it never registered."""
        doc = self._read_doc(ADDRS_KEY)
        entry = doc.get(host_id)
        if isinstance(entry, dict):
            addr = entry.get(kind)
            if isinstance(addr, str) and ":" in addr:
                host, _, port = addr.rpartition(":")
                try:
                    return host, int(port)
                except ValueError:
                    return None
        return None

    def live_hosts(self) -> dict[str, float]:
        doc = self._read_doc(HOSTS_KEY)
        cutoff = self.clock() - self.evict_ttl_s
        return {h: t for h, t in doc.items()
                if isinstance(t, (int, float)) and t >= cutoff}

    def retire(self) -> None:
        """Remove this node from the hosts map (clean shutdown)."""
        def drop(doc):
            doc.pop(self.node_id, None)
            return doc
        try:
            self._update_doc(HOSTS_KEY, drop)
        except (StateError, TransportError):
            pass

    # -- warm sets ---------------------------------------------------------------
    def warm_hosts(self, user: str, name: str) -> list[str]:
        doc = self._read_doc(warm_set_key(user, name))
        hosts = doc.get("hosts", [])
        return [h for h in hosts if isinstance(h, str)]

    def register_warm(self, user: str, name: str) -> None:
        def add(doc):
            hosts = set(doc.get("hosts", []))
            hosts.add(self.node_id)
            return {"hosts": sorted(hosts)}
        self._update_doc(warm_set_key(user, name), add)

    def deregister_warm(self, user: str, name: str) -> None:
        def drop(doc):
            hosts = set(doc.get("hosts", []))
            hosts.discard(self.node_id)
            return {"hosts": sorted(hosts)}
        try:
            self._update_doc(warm_set_key(user, name), drop)
        except (StateError, TransportError):
            pass

    # -- the decision -------------------------------------------------------------
    def decide(self, user: str, name: str, call_id: int, *,
               hops: int = 0, warm_local: bool, active_local: int) -> Placement:
        if hops >= MAX_HOPS:
            if warm_local:
                return Placement(EXECUTE_LOCAL, reason="hop limit, warm here")
            return Placement(COLD_START, reason="hop limit, cold here")

        if warm_local and active_local < self.capacity:
            return Placement(EXECUTE_LOCAL, reason="warm with capacity")

        try:
            live = self.live_hosts()
            others = [h for h in self.warm_hosts(user, name)
                      if h != self.node_id and h in live]
        except (TransportError, StateError):
            others = []

        if others:
            target = rendezvous_pick(call_id, others)
            return Placement(SHARE, target=target,
                             reason="remote warm host")
        if warm_local:
            return Placement(EXECUTE_LOCAL, reason="warm, queueing over capacity")
        return Placement(COLD_START, reason="nothing warm anywhere")
