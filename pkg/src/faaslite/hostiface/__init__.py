"""Host interface: the syscall surface a guest module can import.

Three namespaces are linkable:

- ``faasm`` — call I/O, chaining, shared state (see ``faasm_ns``)
- ``wasi_snapshot_preview1`` — files, clock, randomness (``wasi_ns``)
- ``env`` — heap and outbound sockets (``env_ns``)

``resolver`` is handed to module compilation; it type-checks each
import against the registered signature so a mis-declared import fails
at upload, not mid-call.
"""

from __future__ import annotations

from ..errors import LinkError
from . import env_ns, faasm_ns, wasi_ns
from .context import CallContext, FDEntry, FDTable, TokenBucket
from .vfs import PathError, VirtualFS

NAMESPACES = {
    "faasm": faasm_ns.CALLS,
    "wasi_snapshot_preview1": wasi_ns.CALLS,
    "env": env_ns.CALLS,
}


def resolver(module: str, name: str, functype):
    table = NAMESPACES.get(module)
    if table is None:
        return None
    ent = table.get(name)
    if ent is None:
        return None
    params, results, impl = ent
    if tuple(functype.params) != params or tuple(functype.results) != results:
        raise LinkError(
            f"{module}.{name} is ({', '.join(params)}) -> "
            f"({', '.join(results)}), module declares "
            f"({', '.join(functype.params)}) -> "
            f"({', '.join(functype.results)})")
    return impl


def iface_listing() -> dict[str, list[str]]:
    """Names per namespace, for docs and conformance checks."""
    return {ns: sorted(calls) for ns, calls in NAMESPACES.items()}


__all__ = ["CallContext", "FDEntry", "FDTable", "NAMESPACES", "PathError",
           "TokenBucket", "VirtualFS", "iface_listing", "resolver"]
