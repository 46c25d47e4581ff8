"""Guest linear memory with mapped shared regions.

The guest sees one densely-packed address space ``[0, total)``: a
private range first, then zero or more shared regions appended in
mapping order.  Each shared region aliases a buffer owned by the state
tier, so a store by one sandbox is immediately visible to every other
sandbox mapping the same buffer — no copies, no message hops.

Growing the private range keeps the address space dense by re-basing
every region upward; region buffers themselves never move.  The private
buffer is book-ended by guard zones (a fixed byte pattern outside the
guest-visible range) that the owner can audit for stray writes.
"""

from __future__ import annotations

import struct

from .opcodes import PAGE_SIZE

GUARD_BYTES = 64
GUARD_FILL = 0xC5

GROW_OK = 0
GROW_DECLINED = 1   # past the module's declared max: guest sees -1
GROW_LIMIT = 2      # past the host-imposed hard limit: trap


class MemoryAccessError(Exception):
    """Raised for any access outside ``[0, total_size)``."""

    def __init__(self, addr: int, size: int):
        super().__init__(f"memory access [{addr}, {addr + size}) "
                         "out of bounds")
        self.addr = addr
        self.size = size


class LinearMemory:
    """Segmented byte-addressable memory.

    ``segments`` is a list of ``(start, end, buffer)`` triples covering
    ``[0, total_size)`` contiguously; segment 0 is always the private
    range.  Kept as a plain list because modules map at most a handful
    of regions and a linear scan beats fancier indexing at that size.
    """

    __slots__ = ("declared_max", "hard_limit", "private_pages",
                 "_guard_buf", "private", "regions", "segments",
                 "total_pages", "total_size")

    def __init__(self, min_pages: int, declared_max: int | None,
                 hard_limit: int):
        self.declared_max = declared_max
        self.hard_limit = hard_limit
        self.private_pages = min_pages
        self._alloc_private(min_pages, None)
        self.regions: list[tuple[int, object]] = []  # (pages, buffer)
        self._rebuild()

    def _alloc_private(self, pages: int, old: memoryview | None):
        size = pages * PAGE_SIZE
        buf = bytearray(size + 2 * GUARD_BYTES)
        pat = bytes([GUARD_FILL]) * GUARD_BYTES
        buf[:GUARD_BYTES] = pat
        buf[size + GUARD_BYTES:] = pat
        view = memoryview(buf)[GUARD_BYTES:size + GUARD_BYTES]
        if old is not None:
            view[:len(old)] = old
        self._guard_buf = buf
        self.private = view

    def _rebuild(self):
        segs = [(0, self.private_pages * PAGE_SIZE, self.private)]
        pos = segs[0][1]
        pages = self.private_pages
        for rpages, rbuf in self.regions:
            end = pos + rpages * PAGE_SIZE
            segs.append((pos, end, rbuf))
            pos = end
            pages += rpages
        self.segments = segs
        self.total_pages = pages
        self.total_size = pos

    def guards_intact(self) -> bool:
        pat = bytes([GUARD_FILL]) * GUARD_BYTES
        return (bytes(self._guard_buf[:GUARD_BYTES]) == pat
                and bytes(self._guard_buf[-GUARD_BYTES:]) == pat)

    # --- growth and mapping ---

    def grow_private(self, delta_pages: int) -> tuple[int, int]:
        """Try to add ``delta_pages`` to the private range.

        Returns ``(status, old_total_pages)``.  On success every region
        is re-based upward; their buffers are untouched.
        """
        old_total = self.total_pages
        if delta_pages == 0:
            return GROW_OK, old_total
        if delta_pages < 0:
            return GROW_DECLINED, old_total
        new_priv = self.private_pages + delta_pages
        if self.declared_max is not None and new_priv > self.declared_max:
            return GROW_DECLINED, old_total
        if old_total + delta_pages > self.hard_limit:
            return GROW_LIMIT, old_total
        self._alloc_private(new_priv, self.private)
        self.private_pages = new_priv
        self._rebuild()
        return GROW_OK, old_total

    def unmap_all_regions(self) -> int:
        """Drop every mapped region (buffers are untouched, only the
        guest view shrinks).  Returns how many were dropped."""
        n = len(self.regions)
        if n:
            self.regions.clear()
            self._rebuild()
        return n

    def reset_private(self, image) -> None:
        """Replace the private range with ``image`` (page-granular),
        resizing if needed.  Mapped regions are re-based."""
        if len(image) % PAGE_SIZE:
            raise ValueError("memory image must be page-granular")
        pages = len(image) // PAGE_SIZE
        if pages != self.private_pages:
            self._alloc_private(pages, None)
            self.private_pages = pages
        self.private[:] = image
        self._rebuild()

    def map_region(self, buf, pages: int) -> int:
        """Append ``buf`` (a buffer of exactly ``pages`` pages) to the
        address space.  Returns the guest offset of its first byte."""
        if len(buf) != pages * PAGE_SIZE:
            raise ValueError("region buffer must be page-granular")
        base = self.total_size
        self.regions.append((pages, buf))
        self._rebuild()
        return base

    # --- raw access ---

    def read(self, addr: int, size: int) -> bytes:
        """Copy ``size`` bytes out, crossing segment boundaries."""
        if size < 0 or addr < 0 or addr + size > self.total_size:
            raise MemoryAccessError(addr, size)
        out = bytearray()
        need = size
        for start, end, buf in self.segments:
            if need == 0:
                break
            if addr >= end:
                continue
            take = min(end - addr, need)
            off = addr - start
            out += buf[off:off + take]
            addr += take
            need -= take
        return bytes(out)

    def write(self, addr: int, data) -> None:
        """Copy ``data`` in, crossing segment boundaries."""
        size = len(data)
        if addr < 0 or addr + size > self.total_size:
            raise MemoryAccessError(addr, size)
        pos = 0
        for start, end, buf in self.segments:
            if pos == size:
                break
            if addr >= end:
                continue
            take = min(end - addr, size - pos)
            off = addr - start
            buf[off:off + take] = data[pos:pos + take]
            addr += take
            pos += take

    # --- typed access (interpreter hot path) ---

    def load(self, addr: int, size: int, fmt: str,
             _unpack=struct.unpack_from):
        for start, end, buf in self.segments:
            if start <= addr and addr + size <= end:
                return _unpack(fmt, buf, addr - start)[0]
        # straddles a boundary or is out of range
        return struct.unpack(fmt, self.read(addr, size))[0]

    def store(self, addr: int, size: int, fmt: str, value,
              _pack=struct.pack_into) -> None:
        for start, end, buf in self.segments:
            if start <= addr and addr + size <= end:
                _pack(fmt, buf, addr - start, value)
                return
        self.write(addr, struct.pack(fmt, value))

    # --- bulk ops ---

    def fill(self, dest: int, val: int, count: int) -> None:
        if count < 0 or dest < 0 or dest + count > self.total_size:
            raise MemoryAccessError(dest, count)
        chunk = bytes([val & 0xFF]) * min(count, 65536)
        while count:
            take = min(count, len(chunk))
            self.write(dest, chunk[:take])
            dest += take
            count -= take

    def copy(self, dest: int, src: int, count: int) -> None:
        # gather-then-scatter keeps overlapping ranges correct
        data = self.read(src, count)
        self.write(dest, data)
