"""Sugar for building guest modules against the host interface.

:class:`GuestModule` wraps a :class:`~faaslite.wasm.builder.ModuleBuilder`
with the pieces every guest repeats: host imports with their authoritative
signatures (pulled straight from the host call tables, so a drifted
signature fails at build rather than at link), a deduplicating string
pool in low memory, and a bump allocator for scratch buffers.

Layout convention: addresses below 1 KiB stay free for ad-hoc use,
strings and reserved buffers grow upward from there, and guests that
heap-allocate call ``sbrk`` which hands out fresh pages past the
declared data.
"""

from __future__ import annotations

from ..hostiface import NAMESPACES
from ..wasm import ModuleBuilder

_POOL_BASE = 1024


class GuestModule:
    def __init__(self, min_pages: int = 1, max_pages: int | None = 64):
        self.mb = ModuleBuilder()
        self.mb.memory(min_pages, max_pages)
        self.min_pages = min_pages
        self._imports: dict[tuple, int] = {}
        self._strings: dict[bytes, tuple] = {}
        self._cursor = _POOL_BASE

    # ------------------------------------------------------------ imports

    def use(self, module: str, name: str) -> int:
        """Import a host call (idempotent); returns its function index.
        Must happen before the first function is defined."""
        key = (module, name)
        idx = self._imports.get(key)
        if idx is not None:
            return idx
        table = NAMESPACES.get(module)
        if table is None or name not in table:
            raise KeyError(f"no host call {module}.{name}")
        params, results, _impl = table[name]
        idx = self.mb.import_func(module, name, params, results)
        self._imports[key] = idx
        return idx

    def faasm(self, name: str) -> int:
        return self.use("faasm", name)

    def env(self, name: str) -> int:
        return self.use("env", name)

    def wasi(self, name: str) -> int:
        return self.use("wasi_snapshot_preview1", name)

    # ------------------------------------------------------ memory layout

    def string(self, text) -> tuple:
        """(ptr, len) of the pooled bytes; identical strings share."""
        raw = text.encode() if isinstance(text, str) else bytes(text)
        hit = self._strings.get(raw)
        if hit is not None:
            return hit
        ptr = self._reserve(len(raw), align=1)
        if raw:
            self.mb.data(ptr, raw)
        self._strings[raw] = (ptr, len(raw))
        return ptr, len(raw)

    def scratch(self, size: int, align: int = 8) -> int:
        """Reserve an uninitialized buffer inside the first pages."""
        return self._reserve(size, align)

    def _reserve(self, size: int, align: int) -> int:
        ptr = (self._cursor + align - 1) & ~(align - 1)
        self._cursor = ptr + size
        if self._cursor > self.min_pages * 65536:
            raise ValueError("string/scratch pool outgrew the declared "
                             f"minimum of {self.min_pages} page(s)")
        return ptr

    def data(self, offset: int, payload: bytes) -> None:
        self.mb.data(offset, payload)

    # -------------------------------------------------------------- funcs

    def main(self, results=("i32",)):
        return self.mb.func("_faasm_main", (), results)

    def init(self, results=("i32",)):
        return self.mb.func("_faasm_init", (), results)

    def func(self, export_as=None, params=(), results=(), local_types=()):
        return self.mb.func(export_as, params, results, local_types)

    def build(self) -> bytes:
        return self.mb.build()


def push_key(f, key) -> None:
    """Emit the two consts of a pooled (ptr, len) pair."""
    ptr, length = key
    f.op("i32.const", ptr)
    f.op("i32.const", length)
