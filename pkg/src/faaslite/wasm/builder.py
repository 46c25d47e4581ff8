"""Programmatic construction of binary modules.

The SDK assembles guest functions directly as instruction streams; this
module turns those streams into the standard binary encoding that the
parser consumes.  Emission is deliberately dumb: no type checking
happens here (the validator rejects bad modules at load time), only
encoding.

Typical use::

    b = ModuleBuilder()
    b.memory(2)
    log = b.import_func("env", "log", ("i32",), ())
    f = b.func("_faasm_main", results=("i32",))
    f.op("i32.const", 42)
    f.op("call", log)
    f.op("i32.const", 0)
    raw = b.build()
"""

from __future__ import annotations

import struct

from .opcodes import CODES, LOADS, STORES, NATURAL_ALIGN

_VALTYPE_BYTE = {"i32": 0x7F, "i64": 0x7E, "f32": 0x7D, "f64": 0x7C}


def uleb(n: int) -> bytes:
    if n < 0:
        raise ValueError("uleb of negative value")
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def sleb(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if (n == 0 and not b & 0x40) or (n == -1 and b & 0x40):
            out.append(b)
            return bytes(out)
        out.append(b | 0x80)


def _vec(items: list[bytes]) -> bytes:
    return uleb(len(items)) + b"".join(items)


class FuncBuilder:
    """Instruction stream for a single function body."""

    def __init__(self, owner: "ModuleBuilder", index: int, name: str | None,
                 params, results, local_types):
        self.owner = owner
        self.index = index
        self.name = name
        self.params = tuple(params)
        self.results = tuple(results)
        self.locals = list(local_types)
        self.body = bytearray()
        self._depth = 0

    # -- structured control -------------------------------------------------
    def _blocktype(self, results) -> bytes:
        if not results:
            return b"\x40"
        if len(results) == 1:
            return bytes([_VALTYPE_BYTE[results[0]]])
        raise ValueError("multi-value blocks are not supported")

    def block(self, results=()):
        self.body += b"\x02" + self._blocktype(results)
        self._depth += 1
        return self

    def loop(self, results=()):
        self.body += b"\x03" + self._blocktype(results)
        self._depth += 1
        return self

    def if_(self, results=()):
        self.body += b"\x04" + self._blocktype(results)
        self._depth += 1
        return self

    def else_(self):
        self.body += b"\x05"
        return self

    def end(self):
        if self._depth == 0:
            raise ValueError("end without open block")
        self.body += b"\x0B"
        self._depth -= 1
        return self

    # -- plain instructions ---------------------------------------------------
    def op(self, mnemonic: str, *args):
        """Append one instruction.  Immediates follow as plain ints/floats."""
        if mnemonic in ("block", "loop", "if"):
            raise ValueError("use the structured helpers for control ops")
        code = CODES.get(mnemonic)
        if code is None:
            raise ValueError(f"unknown mnemonic {mnemonic!r}")
        body = self.body
        if code >= 0xFC00:
            body += b"\xfc" + uleb(code & 0xFF)
            if mnemonic == "memory.copy":
                body += b"\x00\x00"
            elif mnemonic == "memory.fill":
                body += b"\x00"
            return self
        body.append(code)
        if mnemonic == "i32.const":
            v = args[0]
            body += sleb(v - 0x100000000 if v >= 0x80000000 else v)
        elif mnemonic == "i64.const":
            v = args[0]
            body += sleb(v - (1 << 64) if v >= (1 << 63) else v)
        elif mnemonic == "f32.const":
            body += struct.pack("<f", args[0])
        elif mnemonic == "f64.const":
            body += struct.pack("<d", args[0])
        elif mnemonic in ("local.get", "local.set", "local.tee",
                          "global.get", "global.set", "call",
                          "br", "br_if"):
            body += uleb(args[0])
        elif mnemonic == "call_indirect":
            body += uleb(args[0]) + b"\x00"
        elif mnemonic == "br_table":
            *targets, default = args
            body += _vec([uleb(t) for t in targets]) + uleb(default)
        elif mnemonic in LOADS or mnemonic in STORES:
            offset = args[0] if args else 0
            body += uleb(NATURAL_ALIGN[mnemonic]) + uleb(offset)
        elif mnemonic in ("memory.size", "memory.grow"):
            body += b"\x00"
        elif args:
            raise ValueError(f"{mnemonic} takes no immediates")
        return self

    def local(self, valtype: str) -> int:
        """Declare one more local; returns its index."""
        self.locals.append(valtype)
        return len(self.params) + len(self.locals) - 1

    def raw(self, data: bytes):
        self.body += data
        return self

    def _encode(self) -> bytes:
        # run-length group the locals
        groups: list[bytes] = []
        i = 0
        while i < len(self.locals):
            j = i
            while j < len(self.locals) and self.locals[j] == self.locals[i]:
                j += 1
            groups.append(uleb(j - i) + bytes([_VALTYPE_BYTE[self.locals[i]]]))
            i = j
        if self._depth:
            raise ValueError(f"function {self.name!r} has {self._depth} "
                             "unclosed block(s)")
        content = _vec(groups) + bytes(self.body) + b"\x0B"
        return uleb(len(content)) + content


class ModuleBuilder:
    def __init__(self):
        self._types: list[tuple] = []
        self._type_idx: dict[tuple, int] = {}
        self._imports: list[tuple] = []      # (module, name, typeidx)
        self._funcs: list[FuncBuilder] = []
        self._globals: list[tuple] = []      # (valtype, mutable, init)
        self._exports: list[tuple] = []      # (name, kind, idx)
        self._datas: list[tuple] = []        # (offset, bytes)
        self._memory: tuple | None = None
        self._table: tuple | None = None     # (offset, [funcidx])

    def _type(self, params, results) -> int:
        key = (tuple(params), tuple(results))
        idx = self._type_idx.get(key)
        if idx is None:
            idx = len(self._types)
            self._types.append(key)
            self._type_idx[key] = idx
        return idx

    def memory(self, min_pages: int, max_pages: int | None = None):
        self._memory = (min_pages, max_pages)
        return self

    def import_func(self, module: str, name: str, params=(), results=()) -> int:
        if self._funcs:
            raise ValueError("imports must be declared before functions")
        idx = len(self._imports)
        self._imports.append((module, name, self._type(params, results)))
        return idx

    def func(self, export_as: str | None = None, params=(), results=(),
             local_types=()) -> FuncBuilder:
        idx = len(self._imports) + len(self._funcs)
        fb = FuncBuilder(self, idx, export_as, params, results, local_types)
        self._funcs.append(fb)
        if export_as is not None:
            self._exports.append((export_as, 0, idx))
        return fb

    def global_(self, valtype: str, mutable: bool, init) -> int:
        self._globals.append((valtype, mutable, init))
        return len(self._globals) - 1

    def export_global(self, name: str, idx: int):
        self._exports.append((name, 3, idx))
        return self

    def export_memory(self, name: str = "memory"):
        self._exports.append((name, 2, 0))
        return self

    def data(self, offset: int, payload: bytes):
        self._datas.append((offset, bytes(payload)))
        return self

    def table(self, func_indices, offset: int = 0):
        self._table = (offset, list(func_indices))
        return self

    def signature(self, params, results) -> int:
        """Type index for call_indirect immediates."""
        return self._type(params, results)

    # -- encoding -------------------------------------------------------------
    @staticmethod
    def _limits(minimum: int, maximum: int | None) -> bytes:
        if maximum is None:
            return b"\x00" + uleb(minimum)
        return b"\x01" + uleb(minimum) + uleb(maximum)

    @staticmethod
    def _section(sid: int, content: bytes) -> bytes:
        return bytes([sid]) + uleb(len(content)) + content

    @staticmethod
    def _const_expr(valtype: str, value) -> bytes:
        if valtype == "i32":
            v = value - 0x100000000 if value >= 0x80000000 else value
            return b"\x41" + sleb(v) + b"\x0B"
        if valtype == "i64":
            v = value - (1 << 64) if value >= (1 << 63) else value
            return b"\x42" + sleb(v) + b"\x0B"
        if valtype == "f32":
            return b"\x43" + struct.pack("<f", value) + b"\x0B"
        return b"\x44" + struct.pack("<d", value) + b"\x0B"

    def build(self) -> bytes:
        for f in self._funcs:  # intern before the type section is emitted
            self._type(f.params, f.results)

        out = bytearray(b"\x00asm\x01\x00\x00\x00")

        if self._types:
            items = []
            for params, results in self._types:
                items.append(
                    b"\x60"
                    + _vec([bytes([_VALTYPE_BYTE[p]]) for p in params])
                    + _vec([bytes([_VALTYPE_BYTE[r]]) for r in results]))
            out += self._section(1, _vec(items))

        if self._imports:
            items = []
            for module, name, tidx in self._imports:
                mb, nb = module.encode(), name.encode()
                items.append(uleb(len(mb)) + mb + uleb(len(nb)) + nb
                             + b"\x00" + uleb(tidx))
            out += self._section(2, _vec(items))

        if self._funcs:
            items = [uleb(self._type(f.params, f.results))
                     for f in self._funcs]
            out += self._section(3, _vec(items))

        if self._table is not None:
            offset, entries = self._table
            size = offset + len(entries)
            out += self._section(4, _vec([b"\x70" + self._limits(size, size)]))

        if self._memory is not None:
            mn, mx = self._memory
            out += self._section(5, _vec([self._limits(mn, mx)]))

        if self._globals:
            items = []
            for valtype, mutable, init in self._globals:
                items.append(bytes([_VALTYPE_BYTE[valtype],
                                    1 if mutable else 0])
                             + self._const_expr(valtype, init))
            out += self._section(6, _vec(items))

        if self._exports:
            items = []
            for name, kind, idx in self._exports:
                nb = name.encode()
                items.append(uleb(len(nb)) + nb + bytes([kind]) + uleb(idx))
            out += self._section(7, _vec(items))

        if self._table is not None:
            offset, entries = self._table
            seg = (b"\x00" + b"\x41" + sleb(offset) + b"\x0B"
                   + _vec([uleb(e) for e in entries]))
            out += self._section(9, _vec([seg]))

        if self._funcs:
            out += self._section(10, _vec([f._encode() for f in self._funcs]))

        if self._datas:
            items = []
            for offset, payload in self._datas:
                items.append(b"\x00" + b"\x41" + sleb(offset) + b"\x0B"
                             + uleb(len(payload)) + payload)
            out += self._section(11, _vec(items))

        return bytes(out)
