"""The ``env`` namespace: heap management and client-side networking.

Heap calls are advisory wrappers over private-memory growth — they
report failure with sentinel return values where a direct
``memory.grow`` would trap, because libc allocators probe with sbrk and
expect a polite no.

Sockets are outbound-only.  A guest can neither bind nor accept, the
destination must be on the context's allow-list, and sends drain a
token bucket so one chatty function cannot saturate the node.
"""

from __future__ import annotations

import socket as _socket
import struct

from ..wasm.interp import HOST_ERROR, Trap
from ..wasm.memory import GROW_OK
from ..wasm.opcodes import PAGE_SIZE

NEG1 = 0xFFFFFFFF

AF_INET = 2
SOCK_STREAM = 1

CONNECT_TIMEOUT_S = 5.0


def _ctx(inst):
    owner = inst.owner
    if owner is None or owner.ctx is None:
        raise Trap(HOST_ERROR, "host call outside a call context")
    return owner.ctx


def _heap_top(inst) -> int:
    fl = inst.owner
    if fl.brk is None:
        fl.brk = inst.memory.private_pages * PAGE_SIZE
    return fl.brk


def _grow_to(inst, new_top: int) -> bool:
    """Ensure the private range covers [0, new_top); False if refused."""
    mem = inst.memory
    have = mem.private_pages * PAGE_SIZE
    if new_top <= have:
        return True
    delta = (new_top - have + PAGE_SIZE - 1) // PAGE_SIZE
    status, _ = mem.grow_private(delta)
    if status != GROW_OK:
        return False
    if inst.on_grow is not None:
        inst.on_grow()
    return True


def sbrk(inst, delta):
    fl = inst.owner
    old = _heap_top(inst)
    d = delta - 0x100000000 if delta >= 0x80000000 else delta
    new = old + d
    if new < 0:
        return NEG1
    if d > 0 and not _grow_to(inst, new):
        return NEG1
    fl.brk = new
    return old


def brk(inst, addr):
    fl = inst.owner
    _heap_top(inst)
    if addr and not _grow_to(inst, addr):
        return NEG1
    if addr:
        fl.brk = addr
    return 0


def mmap(inst, addr, length, prot, flags, fd, offset):
    if fd != NEG1 or length == 0:
        return NEG1
    fl = inst.owner
    top = _heap_top(inst)
    base = (top + PAGE_SIZE - 1) // PAGE_SIZE * PAGE_SIZE
    length = (length + PAGE_SIZE - 1) // PAGE_SIZE * PAGE_SIZE
    if not _grow_to(inst, base + length):
        return NEG1
    fl.brk = base + length
    return base


def munmap(inst, addr, length):
    # pages are not reclaimed; the next snapshot reset drops them anyway
    return 0


def sys_socket(inst, domain, type_, protocol):
    ctx = _ctx(inst)
    if domain != AF_INET or type_ != SOCK_STREAM:
        return NEG1             # AF_UNIX and friends are refused
    from .context import FDEntry
    s = _socket.socket(_socket.AF_INET, _socket.SOCK_STREAM)
    s.settimeout(CONNECT_TIMEOUT_S)
    return ctx.fds.add(FDEntry("socket", s))


def sys_connect(inst, fd, addr_ptr, addr_len):
    ctx = _ctx(inst)
    e = ctx.fds.get(fd)
    if e is None or e.kind != "socket":
        return NEG1
    if addr_len < 8:
        return NEG1
    raw = inst.memory.read(addr_ptr, 8)
    family = struct.unpack_from("<H", raw, 0)[0]
    port = struct.unpack_from(">H", raw, 2)[0]
    host = ".".join(str(b) for b in raw[4:8])
    if family != AF_INET:
        return NEG1
    allow = ctx.net_allow
    if not allow or (host, port) not in allow:
        return NEG1             # default-deny egress
    try:
        e.obj.connect((host, port))
    except OSError:
        return NEG1
    return 0


def sys_bind(inst, fd, addr_ptr, addr_len):
    return NEG1                 # guests never get server sockets


def sys_send(inst, fd, buf_ptr, length, flags):
    ctx = _ctx(inst)
    e = ctx.fds.get(fd)
    if e is None or e.kind != "socket":
        return NEG1
    if length == 0:
        return 0
    granted = ctx.bucket.take(length)
    if granted == 0:
        return 0                # bucket dry; caller retries
    data = bytes(inst.memory.read(buf_ptr, granted))
    try:
        e.obj.sendall(data)
    except OSError:
        return NEG1
    return granted


def sys_recv(inst, fd, buf_ptr, length, flags):
    ctx = _ctx(inst)
    e = ctx.fds.get(fd)
    if e is None or e.kind != "socket":
        return NEG1
    if length == 0:
        return 0
    try:
        data = e.obj.recv(length)
    except OSError:
        return NEG1
    if data:
        inst.memory.write(buf_ptr, data)
    return len(data)


I32 = "i32"

CALLS = {
    "brk": ((I32,), (I32,), brk),
    "sbrk": ((I32,), (I32,), sbrk),
    "mmap": ((I32, I32, I32, I32, I32, I32), (I32,), mmap),
    "munmap": ((I32, I32), (I32,), munmap),
    "socket": ((I32, I32, I32), (I32,), sys_socket),
    "connect": ((I32, I32, I32), (I32,), sys_connect),
    "bind": ((I32, I32, I32), (I32,), sys_bind),
    "send": ((I32, I32, I32, I32), (I32,), sys_send),
    "recv": ((I32, I32, I32, I32), (I32,), sys_recv),
}
