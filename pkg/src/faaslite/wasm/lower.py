"""Function-body validation and lowering.

Each body is type-checked with the standard operand/control stack
algorithm and simultaneously flattened into a list of ``(op, a, b)``
tuples with resolved jump targets, so the interpreter never re-parses
structured control flow.  Branches that need stack adjustment carry a
``(keep, base)`` fixup; branches that don't become plain jumps.

Linking happens here too: every imported function is resolved against a
caller-supplied resolver, so a compiled module holds direct callables
and the interpreter pays no lookup cost per call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..errors import LinkError, ValidationError
from . import opcodes as op
from .parser import FuncType, Limits, Module, Reader


@dataclass
class HostFunc:
    """An imported function bound to a host callable."""

    index: int
    module: str
    name: str
    functype: FuncType
    fn: Callable
    sig: tuple = ()
    is_host = True

    def __post_init__(self):
        self.sig = (self.functype.params, self.functype.results)


class GuestFunc:
    """A defined function lowered to flat code."""

    __slots__ = ("index", "functype", "sig", "nparams", "nresults",
                 "zeros", "code", "export_name")
    is_host = False

    def __init__(self, index, functype, zeros, code, export_name=None):
        self.index = index
        self.functype = functype
        self.sig = (functype.params, functype.results)
        self.nparams = len(functype.params)
        self.nresults = len(functype.results)
        self.zeros = zeros          # list of typed zero values (template)
        self.code = code            # tuple of (op, a, b)
        self.export_name = export_name


class CompiledModule:
    """Validated, linked, and lowered module ready to instantiate."""

    __slots__ = ("types", "funcs", "globals", "memory", "table",
                 "elems", "datas", "exports", "table_template",
                 "num_imports")

    def __init__(self, m: Module, funcs, table_template):
        self.types = m.types
        self.funcs = funcs
        self.globals = m.globals
        self.memory: Limits | None = m.memory
        self.table: Limits | None = m.table
        self.elems = m.elems
        self.datas = m.datas
        self.exports = {e.name: (e.kind, e.index) for e in m.exports}
        self.table_template = table_template
        self.num_imports = len(m.imports)

    def export_func(self, name: str):
        ent = self.exports.get(name)
        if ent is None or ent[0] != "func":
            return None
        return self.funcs[ent[1]]

    def global_values(self) -> list:
        return [g.init for g in self.globals]


class _Frame:
    __slots__ = ("kind", "end_types", "height", "unreachable",
                 "loop_ip", "patches", "else_patch")

    def __init__(self, kind, end_types, height, loop_ip=None):
        self.kind = kind            # func | block | loop | if | else
        self.end_types = end_types  # () or (valtype,)
        self.height = height
        self.unreachable = False
        self.loop_ip = loop_ip
        self.patches: list[tuple[list, int]] = []  # (cell, slot) to backfill
        self.else_patch: list | None = None


class _BodyCompiler:
    """Validates and lowers one function body."""

    def __init__(self, m: Module, funcidx: int):
        self.m = m
        self.funcidx = funcidx
        body = m.bodies[funcidx - len(m.imports)]
        self.ft = m.functype_of(funcidx)
        self.locals = list(self.ft.params) + body.locals
        self.r = Reader(m.data, body.code_start, body.code_end)
        self.vstack: list[str | None] = []
        self.ctrls: list[_Frame] = []
        self.code: list[list] = []

    def fail(self, msg: str):
        raise ValidationError(f"func[{self.funcidx}] +{self.r.pos}: {msg}")

    # --- operand stack ---

    def push(self, t):
        self.vstack.append(t)

    def pop(self, expect=None):
        f = self.ctrls[-1]
        if len(self.vstack) == f.height:
            if f.unreachable:
                return expect
            self.fail(f"stack underflow (wanted {expect or 'a value'})")
        t = self.vstack.pop()
        if expect is not None and t is not None and t != expect:
            self.fail(f"type mismatch: have {t}, want {expect}")
        return t if t is not None else expect

    # --- control stack ---

    def push_frame(self, kind, end_types, loop_ip=None):
        fr = _Frame(kind, end_types, len(self.vstack), loop_ip)
        fr.unreachable = self.ctrls[-1].unreachable if self.ctrls else False
        self.ctrls.append(fr)
        return fr

    def mark_unreachable(self):
        f = self.ctrls[-1]
        del self.vstack[f.height:]
        f.unreachable = True

    def frame_at(self, depth: int) -> _Frame:
        if depth >= len(self.ctrls):
            self.fail(f"branch depth {depth} out of range")
        return self.ctrls[-1 - depth]

    @staticmethod
    def label_types(fr: _Frame) -> tuple:
        return () if fr.kind == "loop" else fr.end_types

    @property
    def live(self) -> bool:
        return not self.ctrls[-1].unreachable

    # --- emission ---

    def emit(self, o, a=None, b=None) -> list:
        cell = [o, a, b]
        self.code.append(cell)
        return cell

    def _emit_branch(self, o, depth: int):
        """Emit a br/br_if aimed at ``depth``.

        Call with the operand stack holding exactly the branch operands
        on top (condition already popped for br_if).
        """
        fr = self.frame_at(depth)
        kinds = self.label_types(fr)
        keep = len(kinds)
        h = len(self.vstack)
        fixup = None if h == fr.height + keep else (keep, fr.height)

        if fr.kind == "func":
            if o == op.OP_BR_IF:
                skip = self.emit(op.OP_JUMP_IF_EZ, None)
                self.emit(op.OP_RETURN, keep)
                skip[1] = len(self.code)
            else:
                self.emit(op.OP_RETURN, keep)
            return
        if fr.kind == "loop":
            if o == op.OP_BR_IF:
                self.emit(op.OP_BR_IF, fr.loop_ip, fixup)
            elif fixup is None:
                self.emit(op.OP_JUMP, fr.loop_ip)
            else:
                self.emit(op.OP_BR, fr.loop_ip, fixup)
            return
        if o == op.OP_BR_IF:
            cell = self.emit(op.OP_BR_IF, None, fixup)
        elif fixup is None:
            cell = self.emit(op.OP_JUMP, None)
        else:
            cell = self.emit(op.OP_BR, None, fixup)
        fr.patches.append((cell, 1))

    def _table_entry(self, depth: int):
        fr = self.frame_at(depth)
        kinds = self.label_types(fr)
        keep = len(kinds)
        if fr.kind == "func":
            return ["ret", keep, 0]
        ent = [fr.loop_ip, keep, fr.height]
        if fr.kind != "loop":
            ent[0] = None
            fr.patches.append((ent, 0))
        return ent

    # --- blocktype ---

    def blocktype(self) -> tuple:
        b = self.r.byte()
        if b == 0x40:
            return ()
        t = op.VALTYPE_BYTES.get(b)
        if t is not None:
            return (t,)
        self.fail("multi-value block types are not supported")

    # --- main loop ---

    def compile(self) -> GuestFunc:
        m, r = self.m, self.r
        self.push_frame("func", self.ft.results)
        while True:
            if r.eof():
                self.fail("body ended without final end opcode")
            b = r.byte()
            name = op.NAMES.get(b)
            if b == op.FC_PREFIX:
                sub = r.u32()
                name = op.FC_NAMES.get(sub)
                if name is None:
                    self.fail(f"unsupported 0xfc opcode {sub}")
                b = 0xFC00 | sub
            elif name is None:
                self.fail(f"unsupported opcode 0x{b:02x}")

            if name == "end":
                fr = self.ctrls[-1]
                for t in reversed(fr.end_types):
                    self.pop(t)
                if len(self.vstack) != fr.height and not fr.unreachable:
                    self.fail("values left on stack at end of block")
                del self.vstack[fr.height:]
                if fr.kind == "if" and fr.end_types:
                    self.fail("if without else cannot yield a value")
                dest = len(self.code)
                for cell, slot in fr.patches:
                    cell[slot] = dest
                if fr.else_patch is not None:
                    fr.else_patch[1] = dest
                self.ctrls.pop()
                if not self.ctrls:
                    if not r.eof():
                        self.fail("trailing bytes after function end")
                    break
                for t in fr.end_types:
                    self.push(t)
                continue

            if name == "else":
                fr = self.ctrls[-1]
                if fr.kind != "if":
                    self.fail("else outside if")
                for t in reversed(fr.end_types):
                    self.pop(t)
                if len(self.vstack) != fr.height and not fr.unreachable:
                    self.fail("values left on stack at else")
                del self.vstack[fr.height:]
                if not fr.unreachable:
                    jump_end = self.emit(op.OP_JUMP, None)
                    fr.patches.append((jump_end, 1))
                if fr.else_patch is not None:
                    fr.else_patch[1] = len(self.code)
                    fr.else_patch = None
                fr.kind = "else"
                fr.unreachable = (self.ctrls[-2].unreachable
                                  if len(self.ctrls) > 1 else False)
                continue

            live = self.live

            if name == "block":
                bt = self.blocktype()
                self.push_frame("block", bt)
            elif name == "loop":
                bt = self.blocktype()
                self.push_frame("loop", bt, loop_ip=len(self.code))
            elif name == "if":
                bt = self.blocktype()
                self.pop(op.I32)
                fr = self.push_frame("if", bt)
                if live:
                    fr.else_patch = self.emit(op.OP_JUMP_IF_EZ, None)
            elif name == "unreachable":
                if live:
                    self.emit(0x00)
                self.mark_unreachable()
            elif name == "nop":
                pass
            elif name == "br":
                depth = r.u32()
                if live:
                    self._emit_branch(op.OP_BR, depth)
                for t in reversed(self.label_types(self.frame_at(depth))):
                    self.pop(t)
                self.mark_unreachable()
            elif name == "br_if":
                depth = r.u32()
                self.pop(op.I32)
                if live:
                    self._emit_branch(op.OP_BR_IF, depth)
                kinds = self.label_types(self.frame_at(depth))
                popped = [self.pop(t) for t in reversed(kinds)]
                for t in reversed(popped):
                    self.push(t)
            elif name == "br_table":
                depths = [r.u32() for _ in range(r.u32())]
                default = r.u32()
                self.pop(op.I32)
                kinds = self.label_types(self.frame_at(default))
                for d in depths:
                    if self.label_types(self.frame_at(d)) != kinds:
                        self.fail("br_table targets disagree on types")
                if live:
                    entries = tuple(self._table_entry(d) for d in depths)
                    self.emit(op.OP_BR_TABLE, entries,
                              self._table_entry(default))
                for t in reversed(kinds):
                    self.pop(t)
                self.mark_unreachable()
            elif name == "return":
                if live:
                    self.emit(op.OP_RETURN, len(self.ft.results))
                for t in reversed(self.ft.results):
                    self.pop(t)
                self.mark_unreachable()
            elif name == "call":
                fidx = r.u32()
                if fidx >= m.num_funcs:
                    self.fail(f"call target {fidx} out of range")
                ft = m.functype_of(fidx)
                for t in reversed(ft.params):
                    self.pop(t)
                for t in ft.results:
                    self.push(t)
                if live:
                    self.emit(0x10, fidx, len(ft.params))
            elif name == "call_indirect":
                ti = r.u32()
                if r.byte() != 0x00:
                    self.fail("call_indirect reserved byte")
                if m.table is None:
                    self.fail("call_indirect without a table")
                if ti >= len(m.types):
                    self.fail("call_indirect typeidx out of range")
                ft = m.types[ti]
                self.pop(op.I32)
                for t in reversed(ft.params):
                    self.pop(t)
                for t in ft.results:
                    self.push(t)
                if live:
                    self.emit(0x11, (ft.params, ft.results), len(ft.params))
            elif name == "drop":
                self.pop()
                if live:
                    self.emit(0x1A)
            elif name == "select":
                self.pop(op.I32)
                t2 = self.pop()
                t1 = self.pop(t2)
                self.push(t1 if t1 is not None else t2)
                if live:
                    self.emit(0x1B)
            elif name in ("local.get", "local.set", "local.tee"):
                i = r.u32()
                if i >= len(self.locals):
                    self.fail(f"local {i} out of range")
                lt = self.locals[i]
                if name == "local.get":
                    self.push(lt)
                elif name == "local.set":
                    self.pop(lt)
                else:
                    self.pop(lt)
                    self.push(lt)
                if live:
                    self.emit(b, i)
            elif name == "global.get":
                i = r.u32()
                if i >= len(m.globals):
                    self.fail(f"global {i} out of range")
                self.push(m.globals[i].valtype)
                if live:
                    self.emit(0x23, i)
            elif name == "global.set":
                i = r.u32()
                if i >= len(m.globals):
                    self.fail(f"global {i} out of range")
                if not m.globals[i].mutable:
                    self.fail(f"global {i} is immutable")
                self.pop(m.globals[i].valtype)
                if live:
                    self.emit(0x24, i)
            elif name in op.LOADS:
                align = r.u32()
                offset = r.u32()
                if align > op.NATURAL_ALIGN[name]:
                    self.fail(f"{name}: alignment too large")
                if m.memory is None:
                    self.fail("memory access without a memory")
                self.pop(op.I32)
                self.push(op.LOADS[name][2])
                if live:
                    self.emit(b, offset)
            elif name in op.STORES:
                align = r.u32()
                offset = r.u32()
                if align > op.NATURAL_ALIGN[name]:
                    self.fail(f"{name}: alignment too large")
                if m.memory is None:
                    self.fail("memory access without a memory")
                self.pop(op.STORES[name][2])
                self.pop(op.I32)
                if live:
                    self.emit(b, offset)
            elif name in ("memory.size", "memory.grow"):
                if r.byte() != 0x00:
                    self.fail("memory index must be 0")
                if m.memory is None:
                    self.fail(f"{name} without a memory")
                if name == "memory.grow":
                    self.pop(op.I32)
                self.push(op.I32)
                if live:
                    self.emit(b)
            elif name in ("memory.copy", "memory.fill"):
                nidx = 2 if name == "memory.copy" else 1
                for _ in range(nidx):
                    if r.byte() != 0x00:
                        self.fail("memory index must be 0")
                if m.memory is None:
                    self.fail(f"{name} without a memory")
                self.pop(op.I32)
                self.pop(op.I32)
                self.pop(op.I32)
                if live:
                    self.emit(b)
            elif name == "i32.const":
                v = r.s32() & 0xFFFFFFFF
                self.push(op.I32)
                if live:
                    self.emit(b, v)
            elif name == "i64.const":
                v = r.s64() & 0xFFFFFFFFFFFFFFFF
                self.push(op.I64)
                if live:
                    self.emit(b, v)
            elif name == "f32.const":
                v = r.f32()
                self.push(op.F32)
                if live:
                    self.emit(b, v)
            elif name == "f64.const":
                v = r.f64()
                self.push(op.F64)
                if live:
                    self.emit(b, v)
            elif name in op.SIGS:
                params, results = op.SIGS[name]
                for t in reversed(params):
                    self.pop(t)
                for t in results:
                    self.push(t)
                if live:
                    self.emit(b)
            else:
                self.fail(f"opcode {name} not allowed in function bodies")

        zeros = [0 if t in (op.I32, op.I64) else 0.0
                 for t in self.locals[len(self.ft.params):]]
        code = tuple(
            (c[0], tuple(tuple(e) for e in c[1]), tuple(c[2]))
            if c[0] == op.OP_BR_TABLE else tuple(c)
            for c in self.code
        )
        return GuestFunc(self.funcidx, self.ft, zeros, code)


def _check_module(m: Module) -> None:
    nf = m.num_funcs
    for e in m.exports:
        bound = {"func": nf, "memory": 1 if m.memory else 0,
                 "table": 1 if m.table else 0,
                 "global": len(m.globals)}[e.kind]
        if e.index >= bound:
            raise ValidationError(f"export {e.name!r} index out of range")
    for seg in m.elems:
        if m.table is None:
            raise ValidationError("elem segment without a table")
        if seg.offset + len(seg.funcidxs) > m.table.min:
            raise ValidationError("elem segment outside table bounds")
        for fi in seg.funcidxs:
            if fi >= nf:
                raise ValidationError("elem funcidx out of range")
    for seg in m.datas:
        if m.memory is None:
            raise ValidationError("data segment without a memory")
        if seg.offset + len(seg.data) > m.memory.min * op.PAGE_SIZE:
            raise ValidationError("data segment outside initial memory")


def compile_module(m: Module, resolve_import) -> CompiledModule:
    """Validate, link, and lower a parsed module.

    ``resolve_import(module, name, functype)`` must return the host
    callable for the import or raise :class:`LinkError`; returning None
    is also treated as a link failure.
    """
    _check_module(m)
    funcs: list = []
    for i, imp in enumerate(m.imports):
        ft = m.types[imp.typeidx]
        fn = resolve_import(imp.module, imp.name, ft)
        if fn is None:
            raise LinkError(f"unknown host symbol {imp.module}.{imp.name}")
        funcs.append(HostFunc(i, imp.module, imp.name, ft, fn))
    export_names = {e.index: e.name for e in m.exports if e.kind == "func"}
    for j in range(len(m.func_typeidxs)):
        fidx = len(m.imports) + j
        gf = _BodyCompiler(m, fidx).compile()
        gf.export_name = export_names.get(fidx)
        funcs.append(gf)

    table_template = None
    if m.table is not None:
        table_template = [None] * m.table.min
        for seg in m.elems:
            for k, fi in enumerate(seg.funcidxs):
                table_template[seg.offset + k] = funcs[fi]

    return CompiledModule(m, funcs, table_template)
