"""Node-local state: the caching half of the two-tier design.

Every key a node touches gets one :class:`StateValue`: a page-granular
buffer whose identity never changes, so sandboxes can map it into their
address space and co-located calls share bytes directly.  Two bitmasks
(one bit per 4 KiB chunk) track which chunks hold data pulled from the
shared tier and which have local writes not yet pushed.  Transfers move
exactly the chunks they must: a pull fetches missing chunks covering
the requested range, a push sends dirty chunks, consecutive chunks ride
in one request.

``mode="data-shipping"`` flips the tier into the strawman it is
compared against: every read fetches the whole value, every write
stores the whole value, nothing is ever considered cached.  Same code
paths above, radically different byte counts.
"""

from __future__ import annotations

import threading

from ..errors import NotFoundError, StateError
from ..wasm.opcodes import PAGE_SIZE
from .rwlock import RWLock

DEFAULT_CHUNK = 4096

TWO_TIER = "two-tier"
DATA_SHIPPING = "data-shipping"


def _pages_for(size: int) -> int:
    return max(1, (size + PAGE_SIZE - 1) // PAGE_SIZE)


class StateValue:
    """One locally-cached value.  ``buf`` never gets reallocated."""

    __slots__ = ("key", "size", "chunk_size", "buf", "pages", "present",
                 "dirty", "lock", "meta")

    def __init__(self, key: str, size: int, chunk_size: int = DEFAULT_CHUNK):
        self.key = key
        self.size = size
        self.chunk_size = chunk_size
        self.pages = _pages_for(size)
        self.buf = bytearray(self.pages * PAGE_SIZE)
        self.present = 0
        self.dirty = 0
        self.lock = RWLock()          # guest-visible local lock
        self.meta = threading.Lock()  # guards the two masks

    @property
    def num_chunks(self) -> int:
        return (self.size + self.chunk_size - 1) // self.chunk_size

    def chunk_range(self, offset: int, length: int) -> tuple[int, int]:
        if length <= 0:
            return 0, 0
        c0 = offset // self.chunk_size
        c1 = (offset + length + self.chunk_size - 1) // self.chunk_size
        return c0, min(c1, self.num_chunks)

    def range_mask(self, offset: int, length: int) -> int:
        c0, c1 = self.chunk_range(offset, length)
        if c1 <= c0:
            return 0
        return ((1 << (c1 - c0)) - 1) << c0

    def full_mask(self) -> int:
        n = self.num_chunks
        return (1 << n) - 1


class LocalTier:
    """All values this node caches, plus the path to the shared tier."""

    def __init__(self, handle=None, *, chunk_size: int = DEFAULT_CHUNK,
                 mode: str = TWO_TIER):
        if mode not in (TWO_TIER, DATA_SHIPPING):
            raise ValueError(f"unknown state mode {mode!r}")
        self.handle = handle
        self.chunk_size = chunk_size
        self.mode = mode
        self._values: dict[str, StateValue] = {}
        self._mu = threading.Lock()
        self._local_appends: dict[str, list[bytes]] = {}

    # -- values ------------------------------------------------------------
    def value(self, key: str, size: int) -> StateValue:
        with self._mu:
            v = self._values.get(key)
            if v is None:
                if size <= 0:
                    size = self._global_size(key)
                v = StateValue(key, size, self.chunk_size)
                self._values[key] = v
            elif size > v.size:
                if size > v.pages * PAGE_SIZE:
                    raise StateError(
                        f"value {key!r} cannot grow past its mapped buffer "
                        f"({v.pages} pages)")
                v.size = size
            return v

    def _global_size(self, key: str) -> int:
        if self.handle is None:
            raise NotFoundError(key)
        return self.handle.size(key)

    def known(self, key: str) -> StateValue | None:
        with self._mu:
            return self._values.get(key)

    def forget(self, key: str) -> None:
        with self._mu:
            self._values.pop(key, None)

    def keys(self) -> list[str]:
        with self._mu:
            return sorted(self._values)

    # -- movement ------------------------------------------------------------
    def ensure_present(self, v: StateValue, offset: int, length: int) -> int:
        """Pull whatever chunks in the range are missing.  Returns the
        number of bytes fetched from the shared tier."""
        if self.mode == DATA_SHIPPING:
            return self._pull_all(v)
        want = v.range_mask(offset, length)
        with v.meta:
            need = want & ~v.present
        if not need or self.handle is None:
            with v.meta:
                v.present |= want
            return 0
        pulled = 0
        for start, stop in _runs(need, v.num_chunks):
            byte0 = start * v.chunk_size
            byte1 = min(stop * v.chunk_size, v.size)
            try:
                data = self.handle.read(v.key, byte0, byte1 - byte0)
            except NotFoundError:
                break   # nothing global yet: local zeros are the value
            v.buf[byte0:byte0 + len(data)] = data
            pulled += len(data)
        with v.meta:
            v.present |= want
        return pulled

    def _pull_all(self, v: StateValue) -> int:
        if self.handle is None:
            return 0
        try:
            data = self.handle.read(v.key, 0, v.size)
        except NotFoundError:
            return 0
        v.buf[:len(data)] = data
        with v.meta:
            v.present = v.full_mask()
        return len(data)

    def pull(self, v: StateValue) -> int:
        """Refresh the whole value from the shared tier (drops the local
        notion of what is present first, keeps dirty chunks dirty)."""
        if self.mode == DATA_SHIPPING:
            return self._pull_all(v)
        with v.meta:
            v.present = 0
        return self.ensure_present(v, 0, v.size)

    def pull_range(self, v: StateValue, offset: int, length: int) -> int:
        if self.mode == DATA_SHIPPING:
            return self._pull_all(v)
        with v.meta:
            v.present &= ~v.range_mask(offset, length)
        return self.ensure_present(v, offset, length)

    def read(self, v: StateValue, offset: int, length: int) -> bytes:
        if offset < 0 or offset + length > v.size:
            raise StateError(
                f"read [{offset}, {offset + length}) outside {v.key!r} "
                f"of size {v.size}")
        self.ensure_present(v, offset, length)
        return bytes(v.buf[offset:offset + length])

    def write(self, v: StateValue, offset: int, data) -> None:
        length = len(data)
        if offset < 0 or offset + length > v.size:
            raise StateError(
                f"write [{offset}, {offset + length}) outside {v.key!r} "
                f"of size {v.size}")
        if length == 0:
            return
        cs = v.chunk_size
        if self.mode == TWO_TIER:
            # partially-covered edge chunks need their other bytes first
            if offset % cs:
                self.ensure_present(v, offset, 1)
            end = offset + length
            if end % cs and end < v.size:
                self.ensure_present(v, end - 1, 1)
        v.buf[offset:offset + length] = data
        m = v.range_mask(offset, length)
        with v.meta:
            v.dirty |= m
            v.present |= m

    def push(self, v: StateValue) -> int:
        return self._push_mask(v, v.full_mask())

    def push_range(self, v: StateValue, offset: int, length: int) -> int:
        return self._push_mask(v, v.range_mask(offset, length))

    def _push_mask(self, v: StateValue, mask: int) -> int:
        """Send dirty chunks under ``mask``; returns bytes sent."""
        if self.handle is None:
            with v.meta:
                v.dirty &= ~mask
            return 0
        if self.mode == DATA_SHIPPING:
            data = bytes(v.buf[:v.size])
            self.handle.write(v.key, 0, data)
            with v.meta:
                v.dirty = 0
            return len(data)
        with v.meta:
            tosend = v.dirty & mask
        if not tosend:
            return 0
        sent = 0
        for start, stop in _runs(tosend, v.num_chunks):
            byte0 = start * v.chunk_size
            byte1 = min(stop * v.chunk_size, v.size)
            self.handle.write(v.key, byte0, bytes(v.buf[byte0:byte1]))
            sent += byte1 - byte0
        with v.meta:
            v.dirty &= ~tosend
        return sent

    # -- append channel -----------------------------------------------------
    def append(self, key: str, data: bytes) -> None:
        if self.handle is not None:
            self.handle.append(key, data)
        else:
            self._local_appends.setdefault(key, []).append(bytes(data))

    def read_appended(self, key: str, length: int) -> bytes:
        if self.handle is not None:
            return self.handle.read_appended(key, length)
        log = self._local_appends.get(key)
        if log is None:
            raise NotFoundError(key)
        return b"".join(log)[:length]

    # -- global locks ---------------------------------------------------------
    def lock_global(self, key: str, mode: str, timeout_s: float):
        if self.handle is None:
            raise StateError("no shared tier configured for global locks")
        return self.handle.lock(key, mode, timeout_s)

    def unlock_global(self, key: str, token: int) -> None:
        if self.handle is None:
            raise StateError("no shared tier configured for global locks")
        self.handle.unlock(key, token)

    # -- counters ---------------------------------------------------------------
    @property
    def bytes_sent(self) -> int:
        return self.handle.bytes_sent if self.handle else 0

    @property
    def bytes_received(self) -> int:
        return self.handle.bytes_received if self.handle else 0


def _runs(mask: int, limit: int):
    """Yield (start, stop) chunk index pairs for set-bit runs in mask."""
    c = 0
    while mask and c < limit:
        if mask & 1:
            start = c
            while mask & 1 and c < limit:
                mask >>= 1
                c += 1
            yield start, c
        else:
            mask >>= 1
            c += 1
