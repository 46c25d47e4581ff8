"""Binary module decoding.

Decodes the standard binary container (magic ``\\0asm``, version 1) into
plain Python structures.  Function bodies are kept as raw byte ranges
here; type checking and lowering happen in :mod:`faaslite.wasm.lower`.
Structural problems raise :class:`~faaslite.errors.ValidationError` with
a byte offset in the message where practical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from ..errors import ValidationError
from . import opcodes as op

MAGIC = b"\x00asm"
VERSION = b"\x01\x00\x00\x00"

SEC_CUSTOM = 0
SEC_TYPE = 1
SEC_IMPORT = 2
SEC_FUNCTION = 3
SEC_TABLE = 4
SEC_MEMORY = 5
SEC_GLOBAL = 6
SEC_EXPORT = 7
SEC_START = 8
SEC_ELEM = 9
SEC_CODE = 10
SEC_DATA = 11
SEC_DATACOUNT = 12

_MAX_SECTION_ORDER = {
    SEC_TYPE: 1, SEC_IMPORT: 2, SEC_FUNCTION: 3, SEC_TABLE: 4,
    SEC_MEMORY: 5, SEC_GLOBAL: 6, SEC_EXPORT: 7, SEC_START: 8,
    SEC_ELEM: 9, SEC_DATACOUNT: 10, SEC_CODE: 11, SEC_DATA: 12,
}


class Reader:
    """Cursor over module bytes with LEB128 helpers."""

    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def eof(self) -> bool:
        return self.pos >= self.end

    def byte(self) -> int:
        if self.pos >= self.end:
            raise ValidationError(f"unexpected end of module at {self.pos}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise ValidationError(f"unexpected end of module at {self.pos}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self) -> int:
        return self._uleb(32)

    def u64(self) -> int:
        return self._uleb(64)

    def s32(self) -> int:
        return self._sleb(32)

    def s33(self) -> int:
        return self._sleb(33)

    def s64(self) -> int:
        return self._sleb(64)

    def _uleb(self, bits: int) -> int:
        result = 0
        shift = 0
        while True:
            b = self.byte()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                break
            if shift >= bits + 7:
                raise ValidationError(f"LEB128 too long at {self.pos}")
        if result >= (1 << bits):
            raise ValidationError(f"LEB128 out of range at {self.pos}")
        return result

    def _sleb(self, bits: int) -> int:
        result = 0
        shift = 0
        while True:
            b = self.byte()
            result |= (b & 0x7F) << shift
            shift += 7
            if not b & 0x80:
                if b & 0x40 and shift < bits + 7:
                    result |= -(1 << shift)
                break
            if shift >= bits + 7:
                raise ValidationError(f"LEB128 too long at {self.pos}")
        lo, hi = -(1 << (bits - 1)), (1 << (bits - 1))
        if not lo <= result < hi:
            raise ValidationError(f"signed LEB128 out of range at {self.pos}")
        return result

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def name(self) -> str:
        n = self.u32()
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ValidationError(f"bad UTF-8 name at {self.pos}: {e}") from e

    def valtype(self) -> str:
        b = self.byte()
        t = op.VALTYPE_BYTES.get(b)
        if t is None:
            raise ValidationError(f"bad value type 0x{b:02x} at {self.pos}")
        return t

    def limits(self) -> "Limits":
        flag = self.byte()
        if flag == 0x00:
            return Limits(self.u32(), None)
        if flag == 0x01:
            mn = self.u32()
            mx = self.u32()
            if mx < mn:
                raise ValidationError("limits: max < min")
            return Limits(mn, mx)
        raise ValidationError(f"bad limits flag 0x{flag:02x}")


@dataclass(frozen=True)
class FuncType:
    params: tuple[str, ...]
    results: tuple[str, ...]

    def __str__(self) -> str:
        return f"({','.join(self.params)})->({','.join(self.results)})"


@dataclass(frozen=True)
class Limits:
    min: int
    max: int | None


@dataclass
class Import:
    module: str
    name: str
    kind: str           # only "func" is accepted
    typeidx: int


@dataclass
class GlobalDef:
    valtype: str
    mutable: bool
    init: int | float   # evaluated constant


@dataclass
class Export:
    name: str
    kind: str
    index: int


@dataclass
class ElemSegment:
    offset: int
    funcidxs: list[int]


@dataclass
class DataSegment:
    offset: int
    data: bytes


@dataclass
class FuncBody:
    locals: list[str]        # expanded local types, params excluded
    code_start: int          # offsets into the module byte string
    code_end: int


@dataclass
class Module:
    """Decoded module, pre-validation."""

    data: bytes = b""
    types: list[FuncType] = field(default_factory=list)
    imports: list[Import] = field(default_factory=list)
    func_typeidxs: list[int] = field(default_factory=list)
    table: Limits | None = None
    memory: Limits | None = None
    globals: list[GlobalDef] = field(default_factory=list)
    exports: list[Export] = field(default_factory=list)
    elems: list[ElemSegment] = field(default_factory=list)
    bodies: list[FuncBody] = field(default_factory=list)
    datas: list[DataSegment] = field(default_factory=list)

    def functype_of(self, funcidx: int) -> FuncType:
        n_imp = len(self.imports)
        if funcidx < n_imp:
            return self.types[self.imports[funcidx].typeidx]
        return self.types[self.func_typeidxs[funcidx - n_imp]]

    @property
    def num_funcs(self) -> int:
        return len(self.imports) + len(self.func_typeidxs)


def _const_expr(r: Reader, expect: str | None = None) -> int | float:
    """Evaluate a constant initializer expression (single const + end)."""
    b = r.byte()
    name = op.NAMES.get(b)
    if name == "i32.const":
        val, t = r.s32() & 0xFFFFFFFF, op.I32
    elif name == "i64.const":
        val, t = r.s64() & 0xFFFFFFFFFFFFFFFF, op.I64
    elif name == "f32.const":
        val, t = r.f32(), op.F32
    elif name == "f64.const":
        val, t = r.f64(), op.F64
    else:
        raise ValidationError(
            f"unsupported constant expression opcode 0x{b:02x}")
    if r.byte() != 0x0B:
        raise ValidationError("constant expression not terminated")
    if expect is not None and t != expect:
        raise ValidationError(f"constant expression type {t}, want {expect}")
    return val


def parse_module(data: bytes) -> Module:
    """Decode ``data`` into a :class:`Module`, checking structure only."""
    if len(data) < 8 or data[:4] != MAGIC:
        raise ValidationError("bad magic: not a module")
    if data[4:8] != VERSION:
        raise ValidationError("unsupported module version")
    r = Reader(data, 8)
    m = Module(data=data)
    last_order = 0
    seen_code = seen_func = False
    body_count = 0

    while not r.eof():
        sec_id = r.byte()
        size = r.u32()
        sec_end = r.pos + size
        if sec_end > r.end:
            raise ValidationError("section extends past end of module")
        s = Reader(data, r.pos, sec_end)

        if sec_id == SEC_CUSTOM:
            s.name()  # decoded for well-formedness, content skipped
        else:
            order = _MAX_SECTION_ORDER.get(sec_id)
            if order is None:
                raise ValidationError(f"unknown section id {sec_id}")
            if order <= last_order:
                raise ValidationError(
                    f"section id {sec_id} out of order or duplicated")
            last_order = order

        if sec_id == SEC_TYPE:
            for _ in range(s.u32()):
                if s.byte() != 0x60:
                    raise ValidationError("bad functype tag")
                params = tuple(s.valtype() for _ in range(s.u32()))
                results = tuple(s.valtype() for _ in range(s.u32()))
                if len(results) > 1:
                    raise ValidationError("multi-value results not supported")
                m.types.append(FuncType(params, results))
        elif sec_id == SEC_IMPORT:
            for _ in range(s.u32()):
                mod, name = s.name(), s.name()
                kind = s.byte()
                if kind != 0x00:
                    raise ValidationError(
                        "only function imports are supported "
                        f"(import {mod}.{name} kind {kind})")
                ti = s.u32()
                if ti >= len(m.types):
                    raise ValidationError("import typeidx out of range")
                m.imports.append(Import(mod, name, "func", ti))
        elif sec_id == SEC_FUNCTION:
            seen_func = True
            for _ in range(s.u32()):
                ti = s.u32()
                if ti >= len(m.types):
                    raise ValidationError("function typeidx out of range")
                m.func_typeidxs.append(ti)
        elif sec_id == SEC_TABLE:
            n = s.u32()
            if n > 1:
                raise ValidationError("at most one table is supported")
            if n:
                if s.byte() != op.FUNCREF:
                    raise ValidationError("only funcref tables supported")
                m.table = s.limits()
        elif sec_id == SEC_MEMORY:
            n = s.u32()
            if n > 1:
                raise ValidationError("at most one memory is supported")
            if n:
                m.memory = s.limits()
                if m.memory.min > 65536 or (m.memory.max or 0) > 65536:
                    raise ValidationError("memory limits exceed 4 GiB")
        elif sec_id == SEC_GLOBAL:
            for _ in range(s.u32()):
                vt = s.valtype()
                mut = s.byte()
                if mut not in (0, 1):
                    raise ValidationError("bad global mutability flag")
                val = _const_expr(s, vt)
                m.globals.append(GlobalDef(vt, bool(mut), val))
        elif sec_id == SEC_EXPORT:
            seen_names = set()
            for _ in range(s.u32()):
                name = s.name()
                if name in seen_names:
                    raise ValidationError(f"duplicate export {name!r}")
                seen_names.add(name)
                kind_b = s.byte()
                idx = s.u32()
                kind = {0: "func", 1: "table", 2: "memory", 3: "global"}.get(
                    kind_b)
                if kind is None:
                    raise ValidationError(f"bad export kind {kind_b}")
                m.exports.append(Export(name, kind, idx))
        elif sec_id == SEC_START:
            raise ValidationError(
                "start sections are not supported; "
                "use an exported init entry instead")
        elif sec_id == SEC_ELEM:
            for _ in range(s.u32()):
                flavor = s.u32()
                if flavor != 0:
                    raise ValidationError("only active elem segments (0)")
                off = _const_expr(s, op.I32)
                idxs = [s.u32() for _ in range(s.u32())]
                m.elems.append(ElemSegment(int(off), idxs))
        elif sec_id == SEC_DATACOUNT:
            s.u32()  # accepted, unused (no memory.init support)
        elif sec_id == SEC_CODE:
            seen_code = True
            body_count = s.u32()
            for _ in range(body_count):
                bsize = s.u32()
                bend = s.pos + bsize
                if bend > sec_end:
                    raise ValidationError("code entry extends past section")
                br = Reader(data, s.pos, bend)
                local_types: list[str] = []
                for _ in range(br.u32()):
                    cnt = br.u32()
                    vt = br.valtype()
                    if len(local_types) + cnt > 50000:
                        raise ValidationError("too many locals")
                    local_types.extend([vt] * cnt)
                m.bodies.append(FuncBody(local_types, br.pos, bend))
                s.pos = bend
        elif sec_id == SEC_DATA:
            for _ in range(s.u32()):
                flavor = s.u32()
                if flavor != 0:
                    raise ValidationError("only active data segments (0)")
                off = _const_expr(s, op.I32)
                m.datas.append(DataSegment(int(off), bytes(s.take(s.u32()))))

        if s.pos != sec_end:
            raise ValidationError(
                f"section id {sec_id} has trailing bytes "
                f"({sec_end - s.pos} unread)")
        r.pos = sec_end

    if seen_func != seen_code or len(m.func_typeidxs) != len(m.bodies):
        raise ValidationError("function/code section mismatch")
    return m
