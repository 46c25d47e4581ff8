"""Call records.

Every call gets a record under ``__calls/<id>`` in the global tier so
that any node can answer a status poll, and so chained calls that hop
between nodes can be awaited from wherever they were issued.  Records
carry an expiry stamp; readers treat an expired record as missing, which
keeps the tier from accruing one key per call forever without needing a
background sweeper (the owning backend may still be purged explicitly
via :func:`purge_expired`).
"""

from __future__ import annotations

import base64
import json
import time

from ..errors import NotFoundError, UnknownCallError

QUEUED = "queued"
RUNNING = "running"
DONE = "done"
FAILED = "failed"

_TERMINAL = (DONE, FAILED)

RECORD_TTL_S = 300.0


def record_key(call_id: int) -> str:
    return f"__calls/{call_id}"


class CallRecord:
    __slots__ = ("call_id", "user", "name", "status", "return_code",
                 "output", "error", "node", "created_at", "finished_at",
                 "expires_at")

    def __init__(self, call_id, user, name, *, status=QUEUED,
                 return_code=None, output=b"", error="", node="",
                 created_at=None, finished_at=None, expires_at=None,
                 ttl_s=RECORD_TTL_S):
        now = time.time()
        self.call_id = call_id
        self.user = user
        self.name = name
        self.status = status
        self.return_code = return_code
        self.output = output
        self.error = error
        self.node = node
        self.created_at = created_at if created_at is not None else now
        self.finished_at = finished_at
        self.expires_at = (expires_at if expires_at is not None
                           else now + ttl_s)

    @property
    def finished(self) -> bool:
        return self.status in _TERMINAL

    def expired(self, now=None) -> bool:
        return (now if now is not None else time.time()) >= self.expires_at

    def to_json(self) -> bytes:
        return json.dumps({
            "call_id": self.call_id, "user": self.user, "name": self.name,
            "status": self.status, "return_code": self.return_code,
            "output": base64.b64encode(self.output).decode("ascii"),
            "error": self.error, "node": self.node,
            "created_at": self.created_at, "finished_at": self.finished_at,
            "expires_at": self.expires_at,
        }, sort_keys=True).encode()

    @classmethod
    def from_json(cls, raw: bytes) -> "CallRecord":
        doc = json.loads(raw.decode())
        return cls(doc["call_id"], doc["user"], doc["name"],
                   status=doc["status"], return_code=doc["return_code"],
                   output=base64.b64decode(doc["output"]),
                   error=doc.get("error", ""), node=doc.get("node", ""),
                   created_at=doc.get("created_at"),
                   finished_at=doc.get("finished_at"),
                   expires_at=doc.get("expires_at"))

    def as_dict(self) -> dict:
        """Shape used by the HTTP status endpoint."""
        return {
            "call_id": self.call_id, "user": self.user, "name": self.name,
            "status": self.status, "return_code": self.return_code,
            "output": base64.b64encode(self.output).decode("ascii"),
            "error": self.error, "node": self.node,
        }


class RecordStore:
    """Reads and writes call records through a state handle."""

    def __init__(self, handle, ttl_s: float = RECORD_TTL_S):
        self.handle = handle
        self.ttl_s = ttl_s

    def put(self, rec: CallRecord) -> None:
        self.handle.write_whole(record_key(rec.call_id), rec.to_json())

    def get(self, call_id: int) -> CallRecord:
        key = record_key(call_id)
        try:
            size = self.handle.size(key)
            raw = self.handle.read(key, 0, size)
        except NotFoundError:
            raise UnknownCallError(f"no such call: {call_id}") from None
        rec = CallRecord.from_json(raw)
        if rec.expired():
            raise UnknownCallError(f"call record expired: {call_id}")
        return rec

    def mark_running(self, rec: CallRecord, node: str) -> None:
        rec.status = RUNNING
        rec.node = node
        self.put(rec)

    def mark_done(self, rec: CallRecord, return_code: int,
                  output: bytes) -> None:
        rec.status = DONE
        rec.return_code = return_code
        rec.output = output
        rec.finished_at = time.time()
        rec.expires_at = rec.finished_at + self.ttl_s
        self.put(rec)

    def mark_failed(self, rec: CallRecord, error: str) -> None:
        rec.status = FAILED
        rec.return_code = None
        rec.error = error
        rec.finished_at = time.time()
        rec.expires_at = rec.finished_at + self.ttl_s
        self.put(rec)


def purge_expired(backend, now=None) -> int:
    """Drop expired records directly from an in-process backend.  Used
    by long-lived deployments and tests; not part of the hot path."""
    now = now if now is not None else time.time()
    dropped = 0
    for key in backend.keys("__calls/"):
        try:
            raw = backend.read(key, 0, backend.size(key)[1])[1]
            rec = CallRecord.from_json(raw)
        except Exception:
            continue
        if rec.expired(now):
            backend.delete(key)
            dropped += 1
    return dropped
