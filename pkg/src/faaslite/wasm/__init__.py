"""Self-contained bytecode engine: parse, validate, lower, execute.

The engine implements the core single-memory instruction set with the
saturating-truncation and bulk-memory extensions that compilers emit by
default.  Linear memory is segmented so host-owned buffers can be
mapped into the guest address space at page granularity — see
:mod:`faaslite.wasm.memory`.
"""

from .builder import FuncBuilder, ModuleBuilder, sleb, uleb
from .interp import (HOST_ERROR, INVALID_CALL, LIMIT_EXCEEDED, MAX_CALL_DEPTH,
                     OUT_OF_BOUNDS, STACK_EXHAUSTED, TRAP_KINDS, UNREACHABLE,
                     Instance, Trap, call_export, call_function, instantiate)
from .lower import CompiledModule, GuestFunc, HostFunc, compile_module
from .memory import (GROW_DECLINED, GROW_LIMIT, GROW_OK, GUARD_BYTES,
                     LinearMemory, MemoryAccessError)
from .opcodes import PAGE_SIZE
from .parser import FuncType, Module, parse_module

__all__ = [
    "CompiledModule", "FuncBuilder", "FuncType", "GuestFunc", "HostFunc",
    "Instance", "LinearMemory", "MemoryAccessError", "Module",
    "ModuleBuilder", "Trap", "call_export", "call_function",
    "compile_module", "instantiate", "parse_module",
    "GROW_DECLINED", "GROW_LIMIT", "GROW_OK", "GUARD_BYTES", "PAGE_SIZE",
    "MAX_CALL_DEPTH", "TRAP_KINDS", "OUT_OF_BOUNDS", "UNREACHABLE",
    "STACK_EXHAUSTED", "INVALID_CALL", "LIMIT_EXCEEDED", "HOST_ERROR",
    "sleb", "uleb",
]
