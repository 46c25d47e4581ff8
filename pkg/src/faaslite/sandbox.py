"""Faaslets: the per-call sandbox.

A faaslet is one instantiated module plus its call context.  Isolation
comes from the engine (software fault isolation: every memory access is
bounds-checked against the faaslet's own address space), so creating a
faaslet costs an allocation, not a process.  Shared state buffers are
mapped into the address space at page granularity; everything else —
input, output, chaining — flows through host calls.

The entry points a module must export are ``_faasm_main`` (the call
body) and optionally ``_faasm_init`` (run once before a snapshot is
taken, never on the hot path).  Both are nullary and return an i32
status, 0 meaning success.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .errors import ValidationError
from .wasm import (CompiledModule, Trap, call_function, compile_module,
                   instantiate, parse_module)
from .wasm.opcodes import PAGE_SIZE

ENTRY = "_faasm_main"
INIT = "_faasm_init"

DEFAULT_MEMORY_LIMIT_PAGES = 1024          # 64 MiB
DEFAULT_DEADLINE_S = 30.0


@dataclass
class FunctionDef:
    """An uploaded function: identity plus module bytes and limits."""

    user: str
    name: str
    raw: bytes
    memory_limit_pages: int = DEFAULT_MEMORY_LIMIT_PAGES
    fuel: int | None = None
    deadline_s: float = DEFAULT_DEADLINE_S

    @property
    def qualified(self) -> str:
        return f"{self.user}/{self.name}"


@dataclass
class InvokeResult:
    return_code: int
    output: bytes
    trap: Trap | None
    wall_ns: int
    cpu_ns: int
    op_count: int

    @property
    def ok(self) -> bool:
        return self.trap is None and self.return_code == 0


class CompiledFunction:
    """A validated module bound to a function definition.

    Shared by every faaslet running the function; holds no per-call
    state.
    """

    def __init__(self, fdef: FunctionDef, module: CompiledModule):
        self.fdef = fdef
        self.module = module

    @classmethod
    def compile(cls, fdef: FunctionDef, resolver) -> "CompiledFunction":
        module = compile_module(parse_module(fdef.raw), resolver)
        entry = module.export_func(ENTRY)
        if entry is None:
            raise ValidationError(f"module exports no {ENTRY!r}")
        for name in (ENTRY, INIT):
            fn = module.export_func(name)
            if fn is None:
                continue
            if fn.functype.params or tuple(fn.functype.results) != ("i32",):
                raise ValidationError(
                    f"{name!r} must take nothing and return i32")
        lm = module.memory
        if lm is not None and lm.min > fdef.memory_limit_pages:
            raise ValidationError(
                f"declared memory ({lm.min} pages) exceeds the limit of "
                f"{fdef.memory_limit_pages} for {fdef.qualified}")
        return cls(fdef, module)

    def has_init(self) -> bool:
        return self.module.export_func(INIT) is not None


def _sgn32(v: int) -> int:
    return v - 0x100000000 if v >= 0x80000000 else v


class Faaslet:
    """One sandbox: an instance, its context, and accounting."""

    def __init__(self, cfn: CompiledFunction, *, image: bytes | None = None,
                 global_values: list | None = None):
        self.cfn = cfn
        self.fdef = cfn.fdef
        self.instance = instantiate(cfn.module, cfn.fdef.memory_limit_pages,
                                    image=image, global_values=global_values,
                                    owner=self)
        self.ctx = None                   # set by the host-call layer
        self.mapped_regions: list[tuple[str, int, int]] = []  # (tag, base, pages)
        self.peak_bytes = self.instance.memory.total_size
        self.invocations = 0
        self.brk: int | None = None       # heap top for brk/sbrk, lazy
        self.instance.on_grow = self._note_growth

    # -- memory ----------------------------------------------------------
    def _note_growth(self):
        size = self.instance.memory.total_size
        if size > self.peak_bytes:
            self.peak_bytes = size

    def map_shared_region(self, tag: str, buf, pages: int) -> int:
        base = self.instance.memory.map_region(buf, pages)
        self.mapped_regions.append((tag, base, pages))
        self._note_growth()
        return base

    def unmap_all_regions(self) -> int:
        n = self.instance.memory.unmap_all_regions()
        self.mapped_regions.clear()
        return n

    def region_base(self, tag: str) -> int | None:
        """Current guest address of a mapped region.  Recomputed on
        demand because private growth re-bases every region."""
        base = self.instance.memory.private_pages * PAGE_SIZE
        for t, _, pages in self.mapped_regions:
            if t == tag:
                return base
            base += pages * PAGE_SIZE
        return None

    @property
    def memory_bytes(self) -> int:
        return self.instance.memory.total_size

    def guards_intact(self) -> bool:
        return self.instance.memory.guards_intact()

    # -- execution ---------------------------------------------------------
    def invoke(self, entry: str = ENTRY, *, deadline_s: float | None = None,
               fuel: int | None = None) -> InvokeResult:
        inst = self.instance
        fn = inst.module.export_func(entry)
        if fn is None:
            raise ValidationError(f"module exports no {entry!r}")
        limit = deadline_s if deadline_s is not None else self.fdef.deadline_s
        inst.deadline = time.monotonic() + limit if limit else None
        inst.fuel = fuel if fuel is not None else self.fdef.fuel
        ops0 = inst.op_count
        trap = None
        rc = 0
        wall0 = time.perf_counter_ns()
        cpu0 = time.thread_time_ns()
        try:
            rs = call_function(inst, fn, [])
            rc = _sgn32(rs[0]) if rs else 0
        except Trap as t:
            trap = t
        cpu = time.thread_time_ns() - cpu0
        wall = time.perf_counter_ns() - wall0
        self.invocations += 1
        self._note_growth()
        out = b""
        if self.ctx is not None:
            out = bytes(self.ctx.output)
        return InvokeResult(rc, out, trap, wall, cpu,
                            inst.op_count - ops0)
