"""Instances and the execution loop.

The loop walks the flat ``(op, a, b)`` code produced by lowering.  i32
and i64 values are held as unsigned Python ints and masked after every
arithmetic op; f64 values are Python floats (IEEE double, so host-side
reference computations that follow the same operation order produce
bit-identical results); f32 values are rounded through a 4-byte
round-trip after every operation.

Abnormal termination raises :class:`Trap` with one of the six fixed
kinds.  Resource enforcement (deadline and optional fuel) is
cooperative: the loop banks instructions in slices of 2048 and settles
against the instance's accounts between slices.
"""

from __future__ import annotations

import math
import struct
import time

from .lower import CompiledModule
from .memory import (GROW_DECLINED, GROW_OK, LinearMemory,
                     MemoryAccessError)
from .opcodes import (OP_BR, OP_BR_IF, OP_BR_TABLE, OP_JUMP, OP_JUMP_IF_EZ,
                      OP_RETURN, PAGE_SIZE)
from ..errors import InstantiationError

M32 = 0xFFFFFFFF
M64 = 0xFFFFFFFFFFFFFFFF
NAN = float("nan")
INF = float("inf")

MAX_CALL_DEPTH = 256
SLICE = 2048

# trap kinds (closed set)
OUT_OF_BOUNDS = "out_of_bounds"
UNREACHABLE = "unreachable"
STACK_EXHAUSTED = "stack_exhausted"
INVALID_CALL = "invalid_call"
LIMIT_EXCEEDED = "limit_exceeded"
HOST_ERROR = "host_error"

TRAP_KINDS = frozenset({OUT_OF_BOUNDS, UNREACHABLE, STACK_EXHAUSTED,
                        INVALID_CALL, LIMIT_EXCEEDED, HOST_ERROR})


class Trap(Exception):
    """Abnormal guest termination."""

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind
        self.detail = detail


class Instance:
    """One live instantiation of a compiled module."""

    __slots__ = ("module", "memory", "globals", "table", "funcs", "owner",
                 "fuel", "deadline", "op_count", "on_grow")

    def __init__(self, module: CompiledModule, memory: LinearMemory,
                 global_values: list, table, owner=None):
        self.module = module
        self.memory = memory
        self.globals = global_values
        self.table = table
        self.funcs = module.funcs
        self.owner = owner
        self.fuel: int | None = None
        self.deadline: float | None = None
        self.op_count = 0
        self.on_grow = None

    def _settle(self, spent: int) -> None:
        self.op_count += spent
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise Trap(LIMIT_EXCEEDED, "call deadline exceeded")
        if self.fuel is not None:
            self.fuel -= spent
            if self.fuel < 0:
                raise Trap(LIMIT_EXCEEDED, "fuel exhausted")


def instantiate(module: CompiledModule, hard_limit_pages: int,
                image: bytes | None = None,
                global_values: list | None = None,
                owner=None) -> Instance:
    """Create a fresh instance.

    With ``image`` the private memory is restored from the given bytes
    (data segments are *not* re-applied); otherwise memory starts zeroed
    at the declared minimum and active data segments are copied in.
    """
    lm = module.memory
    declared_max = lm.max if lm else None
    if image is not None:
        if len(image) % PAGE_SIZE:
            raise InstantiationError("memory image is not page-granular")
        pages = len(image) // PAGE_SIZE
        if pages > hard_limit_pages:
            raise InstantiationError("memory image exceeds the page limit")
        mem = LinearMemory(pages, declared_max, hard_limit_pages)
        mem.private[:] = image
    else:
        min_pages = lm.min if lm else 0
        if min_pages > hard_limit_pages:
            raise InstantiationError(
                f"declared minimum {min_pages} pages exceeds the limit "
                f"of {hard_limit_pages}")
        mem = LinearMemory(min_pages, declared_max, hard_limit_pages)
        view = mem.private
        for seg in module.datas:
            view[seg.offset:seg.offset + len(seg.data)] = seg.data
    gvals = list(global_values) if global_values is not None \
        else module.global_values()
    return Instance(module, mem, gvals, module.table_template, owner)


def call_export(inst: Instance, name: str, args=()) -> list:
    fn = inst.module.export_func(name)
    if fn is None:
        raise Trap(INVALID_CALL, f"no exported function {name!r}")
    return call_function(inst, fn, list(args))


def call_function(inst: Instance, fn, args: list) -> list:
    try:
        if fn.is_host:
            r = fn.fn(inst, *args)
            return [r] if fn.functype.results else []
        return _run(inst, fn, args, 0)
    except MemoryAccessError as e:
        raise Trap(OUT_OF_BOUNDS, str(e)) from None
    except RecursionError:
        raise Trap(STACK_EXHAUSTED, "host recursion limit") from None


def _sgn32(v: int) -> int:
    return v - 0x100000000 if v >= 0x80000000 else v


def _sgn64(v: int) -> int:
    return v - 0x10000000000000000 if v >= 0x8000000000000000 else v


def _idiv(a: int, b: int) -> int:
    # truncated division on signed python ints
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


def _irem(a: int, b: int) -> int:
    return a - _idiv(a, b) * b


def _f32(x: float, _p=struct.pack, _u=struct.unpack) -> float:
    return _u("<f", _p("<f", x))[0]


def _fdiv(a: float, b: float) -> float:
    if b == 0.0:
        if a != a or a == 0.0:
            return NAN
        neg = (math.copysign(1.0, a) < 0) != (math.copysign(1.0, b) < 0)
        return -INF if neg else INF
    return a / b


def _fmin(a: float, b: float) -> float:
    if a != a or b != b:
        return NAN
    if a == b:  # pick -0.0 over +0.0
        return a if math.copysign(1.0, a) < 0 else b
    return a if a < b else b


def _fmax(a: float, b: float) -> float:
    if a != a or b != b:
        return NAN
    if a == b:
        return a if math.copysign(1.0, a) > 0 else b
    return a if a > b else b


def _fnearest(v: float) -> float:
    if v != v or v in (INF, -INF):
        return v
    r = float(round(v))   # round() halves to even
    if r == 0.0 and math.copysign(1.0, v) < 0:
        return -0.0
    return r


def _ffloor(v: float) -> float:
    if v != v or v in (INF, -INF):
        return v
    r = float(math.floor(v))
    if r == 0.0 and math.copysign(1.0, v) < 0:
        return -0.0
    return r


def _fceil(v: float) -> float:
    if v != v or v in (INF, -INF):
        return v
    r = float(math.ceil(v))
    if r == 0.0 and math.copysign(1.0, v) < 0:
        return -0.0
    return r


def _ftrunc(v: float) -> float:
    if v != v or v in (INF, -INF):
        return v
    r = float(math.trunc(v))
    if r == 0.0 and math.copysign(1.0, v) < 0:
        return -0.0
    return r


def _fsqrt(v: float) -> float:
    if v != v:
        return v
    if v < 0.0:
        return NAN
    return math.sqrt(v)


def _trunc_to_int(v: float, lo: int, hi: int, what: str) -> int:
    if v != v:
        raise Trap(UNREACHABLE, f"{what}: NaN")
    if v in (INF, -INF):
        raise Trap(UNREACHABLE, f"{what}: infinite")
    t = math.trunc(v)
    if not lo <= t <= hi:
        raise Trap(UNREACHABLE, f"{what}: out of range")
    return t


def _trunc_sat(v: float, lo: int, hi: int) -> int:
    if v != v:
        return 0
    if v <= lo:
        return lo
    t = math.trunc(v)
    if t >= hi:
        return hi
    if t <= lo:
        return lo
    return t


def _run(inst: Instance, fn, args: list, depth: int) -> list:
    if depth > MAX_CALL_DEPTH:
        raise Trap(STACK_EXHAUSTED, f"call depth exceeds {MAX_CALL_DEPTH}")
    code = fn.code
    n = len(code)
    locals_ = args + list(fn.zeros)
    stack: list = []
    mem = inst.memory
    funcs = inst.funcs
    glob = inst.globals
    ip = 0
    budget = SLICE

    while ip < n:
        budget -= 1
        if budget <= 0:
            inst._settle(SLICE)
            budget = SLICE
        o, a, b = code[ip]
        ip += 1

        if o == 0x20:    # local.get
            stack.append(locals_[a])
        elif o == 0x41 or o == 0x42 or o == 0x43 or o == 0x44:  # const
            stack.append(a)
        elif o == 0x21:  # local.set
            locals_[a] = stack.pop()
        elif o == 0x22:  # local.tee
            locals_[a] = stack[-1]

        # --- i32 arithmetic / comparison ---
        elif o == 0x6A:  # i32.add
            v = stack.pop()
            stack[-1] = (stack[-1] + v) & M32
        elif o == 0x6B:  # i32.sub
            v = stack.pop()
            stack[-1] = (stack[-1] - v) & M32
        elif o == 0x6C:  # i32.mul
            v = stack.pop()
            stack[-1] = (stack[-1] * v) & M32
        elif o == 0x45:  # i32.eqz
            stack[-1] = int(stack[-1] == 0)
        elif o == 0x46:  # i32.eq
            v = stack.pop()
            stack[-1] = int(stack[-1] == v)
        elif o == 0x47:  # i32.ne
            v = stack.pop()
            stack[-1] = int(stack[-1] != v)
        elif o == 0x48:  # i32.lt_s
            v = stack.pop()
            stack[-1] = int(_sgn32(stack[-1]) < _sgn32(v))
        elif o == 0x49:  # i32.lt_u
            v = stack.pop()
            stack[-1] = int(stack[-1] < v)
        elif o == 0x4A:  # i32.gt_s
            v = stack.pop()
            stack[-1] = int(_sgn32(stack[-1]) > _sgn32(v))
        elif o == 0x4B:  # i32.gt_u
            v = stack.pop()
            stack[-1] = int(stack[-1] > v)
        elif o == 0x4C:  # i32.le_s
            v = stack.pop()
            stack[-1] = int(_sgn32(stack[-1]) <= _sgn32(v))
        elif o == 0x4D:  # i32.le_u
            v = stack.pop()
            stack[-1] = int(stack[-1] <= v)
        elif o == 0x4E:  # i32.ge_s
            v = stack.pop()
            stack[-1] = int(_sgn32(stack[-1]) >= _sgn32(v))
        elif o == 0x4F:  # i32.ge_u
            v = stack.pop()
            stack[-1] = int(stack[-1] >= v)

        # --- control ---
        elif o == OP_JUMP:
            ip = a
        elif o == OP_JUMP_IF_EZ:
            if not stack.pop():
                ip = a
        elif o == OP_BR_IF:
            if stack.pop():
                if b is not None:
                    keep, base = b
                    if keep:
                        stack[base:] = stack[-keep:]
                    else:
                        del stack[base:]
                ip = a
        elif o == OP_BR:
            keep, base = b
            if keep:
                stack[base:] = stack[-keep:]
            else:
                del stack[base:]
            ip = a
        elif o == OP_BR_TABLE:
            i = stack.pop()
            dest, keep, base = a[i] if i < len(a) else b
            if dest == "ret":
                inst._settle(SLICE - budget)
                return stack[-keep:] if keep else []
            if keep:
                stack[base:] = stack[-keep:]
            else:
                del stack[base:]
            ip = dest
        elif o == OP_RETURN:
            inst._settle(SLICE - budget)
            return stack[-a:] if a else []
        elif o == 0x00:  # unreachable
            raise Trap(UNREACHABLE, "unreachable executed")

        # --- calls ---
        elif o == 0x10:  # call
            f = funcs[a]
            if b:
                cargs = stack[-b:]
                del stack[-b:]
            else:
                cargs = []
            if f.is_host:
                r = f.fn(inst, *cargs)
                if f.functype.results:
                    stack.append(r)
            else:
                stack.extend(_run(inst, f, cargs, depth + 1))
        elif o == 0x11:  # call_indirect
            i = stack.pop()
            table = inst.table
            if table is None or i >= len(table):
                raise Trap(INVALID_CALL, f"table index {i} out of range")
            f = table[i]
            if f is None:
                raise Trap(INVALID_CALL, f"table entry {i} is null")
            if f.sig != a:
                raise Trap(INVALID_CALL, "indirect call signature mismatch")
            if b:
                cargs = stack[-b:]
                del stack[-b:]
            else:
                cargs = []
            if f.is_host:
                r = f.fn(inst, *cargs)
                if f.functype.results:
                    stack.append(r)
            else:
                stack.extend(_run(inst, f, cargs, depth + 1))

        # --- memory ---
        elif o == 0x28:  # i32.load
            stack[-1] = mem.load(stack[-1] + a, 4, "<I")
        elif o == 0x2B:  # f64.load
            stack[-1] = mem.load(stack[-1] + a, 8, "<d")
        elif o == 0x36:  # i32.store
            v = stack.pop()
            mem.store(stack.pop() + a, 4, "<I", v)
        elif o == 0x39:  # f64.store
            v = stack.pop()
            mem.store(stack.pop() + a, 8, "<d", v)
        elif o == 0x29:  # i64.load
            stack[-1] = mem.load(stack[-1] + a, 8, "<Q")
        elif o == 0x2A:  # f32.load
            stack[-1] = mem.load(stack[-1] + a, 4, "<f")
        elif o == 0x2C:  # i32.load8_s
            stack[-1] = mem.load(stack[-1] + a, 1, "<b") & M32
        elif o == 0x2D:  # i32.load8_u
            stack[-1] = mem.load(stack[-1] + a, 1, "<B")
        elif o == 0x2E:  # i32.load16_s
            stack[-1] = mem.load(stack[-1] + a, 2, "<h") & M32
        elif o == 0x2F:  # i32.load16_u
            stack[-1] = mem.load(stack[-1] + a, 2, "<H")
        elif o == 0x30:  # i64.load8_s
            stack[-1] = mem.load(stack[-1] + a, 1, "<b") & M64
        elif o == 0x31:  # i64.load8_u
            stack[-1] = mem.load(stack[-1] + a, 1, "<B")
        elif o == 0x32:  # i64.load16_s
            stack[-1] = mem.load(stack[-1] + a, 2, "<h") & M64
        elif o == 0x33:  # i64.load16_u
            stack[-1] = mem.load(stack[-1] + a, 2, "<H")
        elif o == 0x34:  # i64.load32_s
            stack[-1] = mem.load(stack[-1] + a, 4, "<i") & M64
        elif o == 0x35:  # i64.load32_u
            stack[-1] = mem.load(stack[-1] + a, 4, "<I")
        elif o == 0x37:  # i64.store
            v = stack.pop()
            mem.store(stack.pop() + a, 8, "<Q", v)
        elif o == 0x38:  # f32.store
            v = stack.pop()
            mem.store(stack.pop() + a, 4, "<f", v)
        elif o == 0x3A:  # i32.store8
            v = stack.pop()
            mem.store(stack.pop() + a, 1, "B", v & 0xFF)
        elif o == 0x3B:  # i32.store16
            v = stack.pop()
            mem.store(stack.pop() + a, 2, "<H", v & 0xFFFF)
        elif o == 0x3C:  # i64.store8
            v = stack.pop()
            mem.store(stack.pop() + a, 1, "B", v & 0xFF)
        elif o == 0x3D:  # i64.store16
            v = stack.pop()
            mem.store(stack.pop() + a, 2, "<H", v & 0xFFFF)
        elif o == 0x3E:  # i64.store32
            v = stack.pop()
            mem.store(stack.pop() + a, 4, "<I", v & M32)
        elif o == 0x3F:  # memory.size
            stack.append(mem.total_pages)
        elif o == 0x40:  # memory.grow
            delta = stack.pop()
            status, old = mem.grow_private(delta)
            if status == GROW_OK:
                stack.append(old)
                if inst.on_grow is not None:
                    inst.on_grow()
            elif status == GROW_DECLINED:
                stack.append(M32)
            else:
                raise Trap(LIMIT_EXCEEDED,
                           f"memory growth past {mem.hard_limit} pages")
        elif o == 0xFC0A:  # memory.copy
            cnt = stack.pop()
            src = stack.pop()
            mem.copy(stack.pop(), src, cnt)
        elif o == 0xFC0B:  # memory.fill
            cnt = stack.pop()
            val = stack.pop()
            mem.fill(stack.pop(), val, cnt)

        # --- parametric / globals ---
        elif o == 0x1A:  # drop
            stack.pop()
        elif o == 0x1B:  # select
            c = stack.pop()
            v2 = stack.pop()
            if c:
                pass
            else:
                stack[-1] = v2
        elif o == 0x23:  # global.get
            stack.append(glob[a])
        elif o == 0x24:  # global.set
            glob[a] = stack.pop()

        # --- remaining i32 ---
        elif o == 0x6D:  # i32.div_s
            v = stack.pop()
            if v == 0:
                raise Trap(UNREACHABLE, "integer divide by zero")
            sa, sb = _sgn32(stack[-1]), _sgn32(v)
            if sa == -0x80000000 and sb == -1:
                raise Trap(UNREACHABLE, "integer overflow")
            stack[-1] = _idiv(sa, sb) & M32
        elif o == 0x6E:  # i32.div_u
            v = stack.pop()
            if v == 0:
                raise Trap(UNREACHABLE, "integer divide by zero")
            stack[-1] = stack[-1] // v
        elif o == 0x6F:  # i32.rem_s
            v = stack.pop()
            if v == 0:
                raise Trap(UNREACHABLE, "integer divide by zero")
            stack[-1] = _irem(_sgn32(stack[-1]), _sgn32(v)) & M32
        elif o == 0x70:  # i32.rem_u
            v = stack.pop()
            if v == 0:
                raise Trap(UNREACHABLE, "integer divide by zero")
            stack[-1] = stack[-1] % v
        elif o == 0x71:  # i32.and
            v = stack.pop()
            stack[-1] &= v
        elif o == 0x72:  # i32.or
            v = stack.pop()
            stack[-1] |= v
        elif o == 0x73:  # i32.xor
            v = stack.pop()
            stack[-1] ^= v
        elif o == 0x74:  # i32.shl
            v = stack.pop() & 31
            stack[-1] = (stack[-1] << v) & M32
        elif o == 0x75:  # i32.shr_s
            v = stack.pop() & 31
            stack[-1] = (_sgn32(stack[-1]) >> v) & M32
        elif o == 0x76:  # i32.shr_u
            v = stack.pop() & 31
            stack[-1] >>= v
        elif o == 0x77:  # i32.rotl
            v = stack.pop() & 31
            x = stack[-1]
            stack[-1] = ((x << v) | (x >> (32 - v))) & M32 if v else x
        elif o == 0x78:  # i32.rotr
            v = stack.pop() & 31
            x = stack[-1]
            stack[-1] = ((x >> v) | (x << (32 - v))) & M32 if v else x
        elif o == 0x67:  # i32.clz
            stack[-1] = 32 - stack[-1].bit_length()
        elif o == 0x68:  # i32.ctz
            x = stack[-1]
            stack[-1] = (x & -x).bit_length() - 1 if x else 32
        elif o == 0x69:  # i32.popcnt
            stack[-1] = stack[-1].bit_count()

        # --- i64 ---
        elif o == 0x7C:  # i64.add
            v = stack.pop()
            stack[-1] = (stack[-1] + v) & M64
        elif o == 0x7D:  # i64.sub
            v = stack.pop()
            stack[-1] = (stack[-1] - v) & M64
        elif o == 0x7E:  # i64.mul
            v = stack.pop()
            stack[-1] = (stack[-1] * v) & M64
        elif o == 0x50:  # i64.eqz
            stack[-1] = int(stack[-1] == 0)
        elif o == 0x51:  # i64.eq
            v = stack.pop()
            stack[-1] = int(stack[-1] == v)
        elif o == 0x52:  # i64.ne
            v = stack.pop()
            stack[-1] = int(stack[-1] != v)
        elif o == 0x53:  # i64.lt_s
            v = stack.pop()
            stack[-1] = int(_sgn64(stack[-1]) < _sgn64(v))
        elif o == 0x54:  # i64.lt_u
            v = stack.pop()
            stack[-1] = int(stack[-1] < v)
        elif o == 0x55:  # i64.gt_s
            v = stack.pop()
            stack[-1] = int(_sgn64(stack[-1]) > _sgn64(v))
        elif o == 0x56:  # i64.gt_u
            v = stack.pop()
            stack[-1] = int(stack[-1] > v)
        elif o == 0x57:  # i64.le_s
            v = stack.pop()
            stack[-1] = int(_sgn64(stack[-1]) <= _sgn64(v))
        elif o == 0x58:  # i64.le_u
            v = stack.pop()
            stack[-1] = int(stack[-1] <= v)
        elif o == 0x59:  # i64.ge_s
            v = stack.pop()
            stack[-1] = int(_sgn64(stack[-1]) >= _sgn64(v))
        elif o == 0x5A:  # i64.ge_u
            v = stack.pop()
            stack[-1] = int(stack[-1] >= v)
        elif o == 0x7F:  # i64.div_s
            v = stack.pop()
            if v == 0:
                raise Trap(UNREACHABLE, "integer divide by zero")
            sa, sb = _sgn64(stack[-1]), _sgn64(v)
            if sa == -0x8000000000000000 and sb == -1:
                raise Trap(UNREACHABLE, "integer overflow")
            stack[-1] = _idiv(sa, sb) & M64
        elif o == 0x80:  # i64.div_u
            v = stack.pop()
            if v == 0:
                raise Trap(UNREACHABLE, "integer divide by zero")
            stack[-1] = stack[-1] // v
        elif o == 0x81:  # i64.rem_s
            v = stack.pop()
            if v == 0:
                raise Trap(UNREACHABLE, "integer divide by zero")
            stack[-1] = _irem(_sgn64(stack[-1]), _sgn64(v)) & M64
        elif o == 0x82:  # i64.rem_u
            v = stack.pop()
            if v == 0:
                raise Trap(UNREACHABLE, "integer divide by zero")
            stack[-1] = stack[-1] % v
        elif o == 0x83:  # i64.and
            v = stack.pop()
            stack[-1] &= v
        elif o == 0x84:  # i64.or
            v = stack.pop()
            stack[-1] |= v
        elif o == 0x85:  # i64.xor
            v = stack.pop()
            stack[-1] ^= v
        elif o == 0x86:  # i64.shl
            v = stack.pop() & 63
            stack[-1] = (stack[-1] << v) & M64
        elif o == 0x87:  # i64.shr_s
            v = stack.pop() & 63
            stack[-1] = (_sgn64(stack[-1]) >> v) & M64
        elif o == 0x88:  # i64.shr_u
            v = stack.pop() & 63
            stack[-1] >>= v
        elif o == 0x89:  # i64.rotl
            v = stack.pop() & 63
            x = stack[-1]
            stack[-1] = ((x << v) | (x >> (64 - v))) & M64 if v else x
        elif o == 0x8A:  # i64.rotr
            v = stack.pop() & 63
            x = stack[-1]
            stack[-1] = ((x >> v) | (x << (64 - v))) & M64 if v else x
        elif o == 0x79:  # i64.clz
            stack[-1] = 64 - stack[-1].bit_length()
        elif o == 0x7A:  # i64.ctz
            x = stack[-1]
            stack[-1] = (x & -x).bit_length() - 1 if x else 64
        elif o == 0x7B:  # i64.popcnt
            stack[-1] = stack[-1].bit_count()

        # --- f64 ---
        elif o == 0xA0:  # f64.add
            v = stack.pop()
            stack[-1] = stack[-1] + v
        elif o == 0xA1:  # f64.sub
            v = stack.pop()
            stack[-1] = stack[-1] - v
        elif o == 0xA2:  # f64.mul
            v = stack.pop()
            stack[-1] = stack[-1] * v
        elif o == 0xA3:  # f64.div
            v = stack.pop()
            stack[-1] = _fdiv(stack[-1], v)
        elif o == 0xA4:  # f64.min
            v = stack.pop()
            stack[-1] = _fmin(stack[-1], v)
        elif o == 0xA5:  # f64.max
            v = stack.pop()
            stack[-1] = _fmax(stack[-1], v)
        elif o == 0xA6:  # f64.copysign
            v = stack.pop()
            stack[-1] = math.copysign(stack[-1], v)
        elif o == 0x99:  # f64.abs
            stack[-1] = math.fabs(stack[-1])
        elif o == 0x9A:  # f64.neg
            stack[-1] = -stack[-1]
        elif o == 0x9B:  # f64.ceil
            stack[-1] = _fceil(stack[-1])
        elif o == 0x9C:  # f64.floor
            stack[-1] = _ffloor(stack[-1])
        elif o == 0x9D:  # f64.trunc
            stack[-1] = _ftrunc(stack[-1])
        elif o == 0x9E:  # f64.nearest
            stack[-1] = _fnearest(stack[-1])
        elif o == 0x9F:  # f64.sqrt
            stack[-1] = _fsqrt(stack[-1])
        elif 0x61 <= o <= 0x66:  # f64 comparisons
            v = stack.pop()
            x = stack[-1]
            if o == 0x61:
                stack[-1] = int(x == v)
            elif o == 0x62:
                stack[-1] = int(x != v)
            elif o == 0x63:
                stack[-1] = int(x < v)
            elif o == 0x64:
                stack[-1] = int(x > v)
            elif o == 0x65:
                stack[-1] = int(x <= v)
            else:
                stack[-1] = int(x >= v)

        # --- f32 ---
        elif o == 0x92:  # f32.add
            v = stack.pop()
            stack[-1] = _f32(stack[-1] + v)
        elif o == 0x93:
            v = stack.pop()
            stack[-1] = _f32(stack[-1] - v)
        elif o == 0x94:
            v = stack.pop()
            stack[-1] = _f32(stack[-1] * v)
        elif o == 0x95:
            v = stack.pop()
            stack[-1] = _f32(_fdiv(stack[-1], v))
        elif o == 0x96:
            v = stack.pop()
            stack[-1] = _fmin(stack[-1], v)
        elif o == 0x97:
            v = stack.pop()
            stack[-1] = _fmax(stack[-1], v)
        elif o == 0x98:
            v = stack.pop()
            stack[-1] = math.copysign(stack[-1], v)
        elif o == 0x8B:
            stack[-1] = math.fabs(stack[-1])
        elif o == 0x8C:
            stack[-1] = -stack[-1]
        elif o == 0x8D:
            stack[-1] = _fceil(stack[-1])
        elif o == 0x8E:
            stack[-1] = _ffloor(stack[-1])
        elif o == 0x8F:
            stack[-1] = _ftrunc(stack[-1])
        elif o == 0x90:
            stack[-1] = _fnearest(stack[-1])
        elif o == 0x91:
            stack[-1] = _f32(_fsqrt(stack[-1]))
        elif 0x5B <= o <= 0x60:  # f32 comparisons
            v = stack.pop()
            x = stack[-1]
            if o == 0x5B:
                stack[-1] = int(x == v)
            elif o == 0x5C:
                stack[-1] = int(x != v)
            elif o == 0x5D:
                stack[-1] = int(x < v)
            elif o == 0x5E:
                stack[-1] = int(x > v)
            elif o == 0x5F:
                stack[-1] = int(x <= v)
            else:
                stack[-1] = int(x >= v)

        # --- conversions ---
        elif o == 0xA7:  # i32.wrap_i64
            stack[-1] &= M32
        elif o == 0xA8:  # i32.trunc_f32_s
            stack[-1] = _trunc_to_int(stack[-1], -0x80000000, 0x7FFFFFFF,
                                      "i32.trunc_f32_s") & M32
        elif o == 0xA9:
            stack[-1] = _trunc_to_int(stack[-1], 0, M32, "i32.trunc_f32_u")
        elif o == 0xAA:
            stack[-1] = _trunc_to_int(stack[-1], -0x80000000, 0x7FFFFFFF,
                                      "i32.trunc_f64_s") & M32
        elif o == 0xAB:
            stack[-1] = _trunc_to_int(stack[-1], 0, M32, "i32.trunc_f64_u")
        elif o == 0xAC:  # i64.extend_i32_s
            stack[-1] = _sgn32(stack[-1]) & M64
        elif o == 0xAD:  # i64.extend_i32_u
            pass
        elif o == 0xAE:
            stack[-1] = _trunc_to_int(stack[-1], -0x8000000000000000,
                                      0x7FFFFFFFFFFFFFFF,
                                      "i64.trunc_f32_s") & M64
        elif o == 0xAF:
            stack[-1] = _trunc_to_int(stack[-1], 0, M64, "i64.trunc_f32_u")
        elif o == 0xB0:
            stack[-1] = _trunc_to_int(stack[-1], -0x8000000000000000,
                                      0x7FFFFFFFFFFFFFFF,
                                      "i64.trunc_f64_s") & M64
        elif o == 0xB1:
            stack[-1] = _trunc_to_int(stack[-1], 0, M64, "i64.trunc_f64_u")
        elif o == 0xB2:  # f32.convert_i32_s
            stack[-1] = _f32(float(_sgn32(stack[-1])))
        elif o == 0xB3:
            stack[-1] = _f32(float(stack[-1]))
        elif o == 0xB4:
            stack[-1] = _f32(float(_sgn64(stack[-1])))
        elif o == 0xB5:
            stack[-1] = _f32(float(stack[-1]))
        elif o == 0xB6:  # f32.demote_f64
            stack[-1] = _f32(stack[-1])
        elif o == 0xB7:  # f64.convert_i32_s
            stack[-1] = float(_sgn32(stack[-1]))
        elif o == 0xB8:
            stack[-1] = float(stack[-1])
        elif o == 0xB9:
            stack[-1] = float(_sgn64(stack[-1]))
        elif o == 0xBA:
            stack[-1] = float(stack[-1])
        elif o == 0xBB:  # f64.promote_f32
            pass
        elif o == 0xBC:  # i32.reinterpret_f32
            stack[-1] = struct.unpack("<I", struct.pack("<f", stack[-1]))[0]
        elif o == 0xBD:  # i64.reinterpret_f64
            stack[-1] = struct.unpack("<Q", struct.pack("<d", stack[-1]))[0]
        elif o == 0xBE:  # f32.reinterpret_i32
            stack[-1] = struct.unpack("<f", struct.pack("<I", stack[-1]))[0]
        elif o == 0xBF:  # f64.reinterpret_i64
            stack[-1] = struct.unpack("<d", struct.pack("<Q", stack[-1]))[0]
        elif o == 0xC0:  # i32.extend8_s
            stack[-1] = (_sgn32((stack[-1] & 0xFF) << 24) >> 24) & M32
        elif o == 0xC1:  # i32.extend16_s
            stack[-1] = (_sgn32((stack[-1] & 0xFFFF) << 16) >> 16) & M32
        elif o == 0xC2:  # i64.extend8_s
            v = stack[-1] & 0xFF
            stack[-1] = (v - 0x100 if v >= 0x80 else v) & M64
        elif o == 0xC3:  # i64.extend16_s
            v = stack[-1] & 0xFFFF
            stack[-1] = (v - 0x10000 if v >= 0x8000 else v) & M64
        elif o == 0xC4:  # i64.extend32_s
            v = stack[-1] & M32
            stack[-1] = _sgn32(v) & M64
        elif o == 0xFC00:  # i32.trunc_sat_f32_s
            stack[-1] = _trunc_sat(stack[-1], -0x80000000, 0x7FFFFFFF) & M32
        elif o == 0xFC01:
            stack[-1] = _trunc_sat(stack[-1], 0, M32)
        elif o == 0xFC02:
            stack[-1] = _trunc_sat(stack[-1], -0x80000000, 0x7FFFFFFF) & M32
        elif o == 0xFC03:
            stack[-1] = _trunc_sat(stack[-1], 0, M32)
        elif o == 0xFC04:
            stack[-1] = _trunc_sat(stack[-1], -0x8000000000000000,
                                   0x7FFFFFFFFFFFFFFF) & M64
        elif o == 0xFC05:
            stack[-1] = _trunc_sat(stack[-1], 0, M64)
        elif o == 0xFC06:
            stack[-1] = _trunc_sat(stack[-1], -0x8000000000000000,
                                   0x7FFFFFFFFFFFFFFF) & M64
        elif o == 0xFC07:
            stack[-1] = _trunc_sat(stack[-1], 0, M64)
        elif o == 0x01:  # nop (never emitted, kept for safety)
            pass
        else:
            raise Trap(HOST_ERROR, f"unknown lowered opcode 0x{o:x}")

    inst._settle(SLICE - budget)
    return stack
