"""A two-layer in-memory filesystem for guests.

Layer one is shared and read-only: files every function of a user can
see (lookup tables, config, model weights).  Layer two is private to
the call context and absorbs all writes; opening a shared file for
writing copies it up first.  Paths are straight strings with ``/``
separators — normalisation rejects anything that escapes the root.
"""

from __future__ import annotations

import threading


class PathError(Exception):
    pass


def normalize(path: str) -> str:
    if "\x00" in path:
        raise PathError("NUL in path")
    parts = []
    for part in path.split("/"):
        if part in ("", "."):
            continue
        if part == "..":
            if not parts:
                raise PathError(f"path escapes the root: {path!r}")
            parts.pop()
        else:
            parts.append(part)
    return "/".join(parts)


class VirtualFS:
    def __init__(self, shared: dict[str, bytes] | None = None):
        self._shared = {normalize(k): bytes(v)
                        for k, v in (shared or {}).items()}
        self._local: dict[str, bytearray] = {}
        self._mu = threading.Lock()

    def add_shared(self, path: str, data: bytes) -> None:
        with self._mu:
            self._shared[normalize(path)] = bytes(data)

    def exists(self, path: str) -> bool:
        p = normalize(path)
        with self._mu:
            return p in self._local or p in self._shared

    def open_for_read(self, path: str) -> bytes:
        p = normalize(path)
        with self._mu:
            if p in self._local:
                return bytes(self._local[p])
            if p in self._shared:
                return self._shared[p]
        raise FileNotFoundError(path)

    def open_for_write(self, path: str, *, create: bool,
                       truncate: bool) -> bytearray:
        p = normalize(path)
        with self._mu:
            buf = self._local.get(p)
            if buf is None:
                shared = self._shared.get(p)
                if shared is not None:
                    buf = self._local[p] = bytearray(shared)  # copy up
                elif create:
                    buf = self._local[p] = bytearray()
                else:
                    raise FileNotFoundError(path)
            if truncate:
                del buf[:]
            return buf

    def stat(self, path: str) -> int:
        """Size in bytes; raises FileNotFoundError."""
        p = normalize(path)
        with self._mu:
            if p in self._local:
                return len(self._local[p])
            if p in self._shared:
                return len(self._shared[p])
        raise FileNotFoundError(path)

    def listing(self) -> dict[str, int]:
        with self._mu:
            out = {p: len(b) for p, b in self._shared.items()}
            out.update({p: len(b) for p, b in self._local.items()})
            return out
