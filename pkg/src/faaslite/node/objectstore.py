"""Function registry: content-addressed module storage plus manifests.

Module binaries live on disk under ``objects/<sha256>`` and are
advertised through a per-function manifest (JSON) naming the digest and
execution limits.  Both layers are also published to the global state
tier (``__objects/<digest>``, ``__funcs/<user>/<name>``) so that other
nodes can fetch what they did not receive directly.  Disk writes go
through a temp file and an atomic rename; re-uploading identical bytes
is a no-op for the object, a version bump for the manifest.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time

from ..errors import NotFoundError, UnknownFunctionError, ValidationError
from ..hostiface import resolver
from ..sandbox import (DEFAULT_DEADLINE_S, DEFAULT_MEMORY_LIMIT_PAGES,
                       CompiledFunction, FunctionDef)

OBJECT_KEY_PREFIX = "__objects/"
MANIFEST_KEY_PREFIX = "__funcs/"


def object_key(digest: str) -> str:
    return OBJECT_KEY_PREFIX + digest


def manifest_key(user: str, name: str) -> str:
    return f"{MANIFEST_KEY_PREFIX}{user}/{name}"


class Manifest:
    """One uploaded version of a function."""

    __slots__ = ("user", "name", "digest", "size", "version",
                 "memory_limit_pages", "fuel", "deadline_s", "uploaded_at")

    def __init__(self, user, name, digest, size, version=1,
                 memory_limit_pages=DEFAULT_MEMORY_LIMIT_PAGES,
                 fuel=None, deadline_s=DEFAULT_DEADLINE_S,
                 uploaded_at=0.0):
        self.user = user
        self.name = name
        self.digest = digest
        self.size = size
        self.version = version
        self.memory_limit_pages = memory_limit_pages
        self.fuel = fuel
        self.deadline_s = deadline_s
        self.uploaded_at = uploaded_at

    def to_json(self) -> bytes:
        return json.dumps({
            "user": self.user, "name": self.name, "digest": self.digest,
            "size": self.size, "version": self.version,
            "memory_limit_pages": self.memory_limit_pages,
            "fuel": self.fuel, "deadline_s": self.deadline_s,
            "uploaded_at": self.uploaded_at,
        }, sort_keys=True).encode()

    @classmethod
    def from_json(cls, raw: bytes) -> "Manifest":
        doc = json.loads(raw.decode())
        return cls(doc["user"], doc["name"], doc["digest"], doc["size"],
                   doc.get("version", 1),
                   doc.get("memory_limit_pages", DEFAULT_MEMORY_LIMIT_PAGES),
                   doc.get("fuel"),
                   doc.get("deadline_s", DEFAULT_DEADLINE_S),
                   doc.get("uploaded_at", 0.0))


class FunctionStore:
    """Disk-backed registry with a compile cache, fed from uploads or
    from the global tier."""

    def __init__(self, store_dir: str | None, tier=None):
        if not store_dir:
            store_dir = tempfile.mkdtemp(prefix="faaslite-store-")
        self.root = store_dir
        self.tier = tier  # LocalTier, for cross-node distribution
        os.makedirs(os.path.join(self.root, "objects"), exist_ok=True)
        os.makedirs(os.path.join(self.root, "manifests"), exist_ok=True)
        self._lock = threading.Lock()
        self._compiled: dict[str, CompiledFunction] = {}   # digest -> fn
        self._manifests: dict[str, Manifest] = {}          # user/name -> m
        self._checked_at: dict[str, float] = {}            # tier re-check
        self.recheck_s = 2.0

    # ------------------------------------------------------------- paths

    def _object_path(self, digest: str) -> str:
        return os.path.join(self.root, "objects", digest)

    def _manifest_path(self, user: str, name: str) -> str:
        return os.path.join(self.root, "manifests", f"{user}.{name}.json")

    # ------------------------------------------------------------ upload

    def upload(self, user: str, name: str, raw: bytes, *,
               memory_limit_pages: int = DEFAULT_MEMORY_LIMIT_PAGES,
               fuel: int | None = None,
               deadline_s: float = DEFAULT_DEADLINE_S) -> Manifest:
        """Validate, store, publish.  Raises ValidationError on a module
        that does not parse, link, or export the expected entry."""
        digest = hashlib.sha256(raw).hexdigest()
        fdef = FunctionDef(user, name, raw,
                           memory_limit_pages=memory_limit_pages,
                           fuel=fuel, deadline_s=deadline_s)
        compiled = CompiledFunction.compile(fdef, resolver)

        with self._lock:
            prev = self._manifests.get(f"{user}/{name}")
            version = prev.version + 1 if prev else 1
            man = Manifest(user, name, digest, len(raw), version,
                           memory_limit_pages, fuel, deadline_s,
                           uploaded_at=time.time())
            self._write_object(digest, raw)
            self._write_manifest(man)
            self._compiled[digest] = compiled
            self._manifests[f"{user}/{name}"] = man

        if self.tier is not None:
            handle = self.tier.handle
            if handle is not None:
                handle.write_whole(object_key(digest), raw)
                handle.write_whole(manifest_key(user, name), man.to_json())
        return man

    def _write_object(self, digest: str, raw: bytes) -> None:
        path = self._object_path(digest)
        if os.path.exists(path):
            return
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path))
        try:
            os.write(fd, raw)
        finally:
            os.close(fd)
        os.replace(tmp, path)

    def _write_manifest(self, man: Manifest) -> None:
        path = self._manifest_path(man.user, man.name)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path))
        try:
            os.write(fd, man.to_json())
        finally:
            os.close(fd)
        os.replace(tmp, path)

    # ------------------------------------------------------------ lookup

    def manifest(self, user: str, name: str) -> Manifest:
        """Current manifest, from memory, disk, or the global tier.

        The tier is consulted when we have no local copy, and otherwise
        at most every ``recheck_s`` seconds, so a version uploaded on
        another node is picked up without a tier roundtrip per call."""
        key = f"{user}/{name}"
        now = time.monotonic()
        with self._lock:
            man = self._manifests.get(key)
            checked = self._checked_at.get(key, 0.0)
        if man is None:
            man = self._load_manifest_from_disk(user, name)
        if man is None or now - checked >= self.recheck_s:
            tier_man = self._fetch_manifest_from_tier(user, name)
            if tier_man is not None and (
                    man is None or
                    (tier_man.version, tier_man.uploaded_at)
                    > (man.version, man.uploaded_at)):
                man = tier_man
                self._write_manifest(man)
            with self._lock:
                self._checked_at[key] = now
        if man is None:
            raise UnknownFunctionError(f"no such function: {key}")
        with self._lock:
            self._manifests[key] = man
        return man

    def _load_manifest_from_disk(self, user, name):
        path = self._manifest_path(user, name)
        try:
            with open(path, "rb") as fh:
                return Manifest.from_json(fh.read())
        except FileNotFoundError:
            return None

    def _fetch_manifest_from_tier(self, user, name):
        if self.tier is None or self.tier.handle is None:
            return None
        handle = self.tier.handle
        try:
            size = handle.size(manifest_key(user, name))
            raw = handle.read(manifest_key(user, name), 0, size)
            return Manifest.from_json(raw)
        except NotFoundError:
            return None

    def module_bytes(self, man: Manifest) -> bytes:
        path = self._object_path(man.digest)
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except FileNotFoundError:
            raw = self._fetch_object_from_tier(man.digest)
            self._write_object(man.digest, raw)
        got = hashlib.sha256(raw).hexdigest()
        if got != man.digest:
            raise ValidationError(
                f"stored module digest mismatch for {man.user}/{man.name}: "
                f"want {man.digest[:12]}, got {got[:12]}")
        return raw

    def _fetch_object_from_tier(self, digest: str) -> bytes:
        if self.tier is None or self.tier.handle is None:
            raise UnknownFunctionError(f"module object missing: {digest[:12]}")
        handle = self.tier.handle
        try:
            size = handle.size(object_key(digest))
            return handle.read(object_key(digest), 0, size)
        except NotFoundError:
            raise UnknownFunctionError(
                f"module object missing: {digest[:12]}") from None

    def compiled(self, man: Manifest) -> CompiledFunction:
        """Compiled module for a manifest, caching by digest."""
        with self._lock:
            fn = self._compiled.get(man.digest)
        if fn is not None:
            return fn
        raw = self.module_bytes(man)
        fdef = FunctionDef(man.user, man.name, raw,
                           memory_limit_pages=man.memory_limit_pages,
                           fuel=man.fuel, deadline_s=man.deadline_s)
        fn = CompiledFunction.compile(fdef, resolver)
        with self._lock:
            self._compiled[man.digest] = fn
        return fn

    def listing(self) -> list:
        with self._lock:
            return sorted(self._manifests)
