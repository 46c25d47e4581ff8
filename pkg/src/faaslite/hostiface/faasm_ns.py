"""The ``faasm`` namespace: call I/O, chaining, and shared state.

Strings cross the boundary as (pointer, length) pairs of UTF-8; every
pointer is bounds-checked by the memory layer, so a bad one becomes an
``out_of_bounds`` trap rather than corruption.  State handles returned
to the guest are plain guest addresses into mapped regions.

Signature conventions: getters return sizes or guest pointers as i32,
mutators return nothing, lock acquisitions return 0 on success.
"""

from __future__ import annotations

from ..errors import StateError
from ..state.local import DATA_SHIPPING
from ..wasm.interp import HOST_ERROR, Trap

GLOBAL_LOCK_TIMEOUT_S = 10.0


def _ctx(inst):
    owner = inst.owner
    if owner is None or owner.ctx is None:
        raise Trap(HOST_ERROR, "host call outside a call context")
    return owner.ctx


def _read_str(inst, ptr: int, length: int) -> str:
    raw = inst.memory.read(ptr, length)
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise Trap(HOST_ERROR, "string argument is not UTF-8") from None


def _state_value(ctx, key: str, size: int):
    try:
        return ctx.tier.value(key, size)
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None


def _map_value(ctx, v) -> int:
    """Map the value's buffer into the guest, once per faaslet."""
    fl = ctx.faaslet
    tag = f"state:{v.key}"
    if v.key not in ctx.mapped:
        fl.map_shared_region(tag, v.buf, v.pages)
        ctx.mapped[v.key] = tag
    base = fl.region_base(tag)
    if base is None:
        raise Trap(HOST_ERROR, f"mapping for {v.key!r} vanished")
    return base


# -- call I/O -----------------------------------------------------------------

def read_call_input(inst, buf_ptr, buf_len):
    ctx = _ctx(inst)
    data = ctx.input
    n = min(len(data), buf_len)
    if n:
        inst.memory.write(buf_ptr, data[:n])
    return len(data)


def write_call_output(inst, ptr, length):
    ctx = _ctx(inst)
    ctx.output += inst.memory.read(ptr, length)


def chain_call(inst, name_ptr, name_len, in_ptr, in_len):
    ctx = _ctx(inst)
    if ctx.chainer is None:
        raise Trap(HOST_ERROR, "chaining is not available here")
    name = _read_str(inst, name_ptr, name_len)
    payload = bytes(inst.memory.read(in_ptr, in_len)) if in_len else b""
    return ctx.chainer.chain(name, payload) & 0xFFFFFFFF


def await_call(inst, call_id):
    ctx = _ctx(inst)
    if ctx.chainer is None:
        raise Trap(HOST_ERROR, "chaining is not available here")
    rc = ctx.chainer.wait(call_id)
    return rc & 0xFFFFFFFF


def get_call_output(inst, call_id, buf_ptr, buf_len):
    ctx = _ctx(inst)
    if ctx.chainer is None:
        raise Trap(HOST_ERROR, "chaining is not available here")
    data = ctx.chainer.output(call_id)
    if data is None:
        return 0xFFFFFFFF       # -1: unknown call or output expired
    n = min(len(data), buf_len)
    if n:
        inst.memory.write(buf_ptr, data[:n])
    return len(data)


# -- state: mapped access ------------------------------------------------------

def get_state(inst, key_ptr, key_len, size):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    v = _state_value(ctx, key, size)
    try:
        ctx.tier.ensure_present(v, 0, v.size)
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None
    return _map_value(ctx, v)


def get_state_offset(inst, key_ptr, key_len, offset, length):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    v = _state_value(ctx, key, 0)
    if offset + length > v.size:
        raise Trap(HOST_ERROR,
                   f"state range [{offset}, {offset + length}) outside "
                   f"{key!r} of size {v.size}")
    try:
        ctx.tier.ensure_present(v, offset, length)
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None
    return _map_value(ctx, v) + offset


def set_state(inst, key_ptr, key_len, data_ptr, data_len):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    data = inst.memory.read(data_ptr, data_len)
    v = _state_value(ctx, key, data_len)
    try:
        ctx.tier.write(v, 0, data)
        if ctx.tier.mode == DATA_SHIPPING:
            ctx.tier.push(v)
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None


def set_state_offset(inst, key_ptr, key_len, offset, data_ptr, data_len):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    data = inst.memory.read(data_ptr, data_len)
    v = _state_value(ctx, key, 0)
    try:
        ctx.tier.write(v, offset, data)
        if ctx.tier.mode == DATA_SHIPPING:
            ctx.tier.push(v)
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None


# -- state: explicit movement ---------------------------------------------------

def push_state(inst, key_ptr, key_len):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    v = ctx.tier.known(key)
    if v is None:
        return 0
    try:
        return ctx.tier.push(v) & 0xFFFFFFFF
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None


def push_state_offset(inst, key_ptr, key_len, offset, length):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    v = ctx.tier.known(key)
    if v is None:
        return 0
    try:
        return ctx.tier.push_range(v, offset, length) & 0xFFFFFFFF
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None


def pull_state(inst, key_ptr, key_len, size):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    v = _state_value(ctx, key, size)
    try:
        return ctx.tier.pull(v) & 0xFFFFFFFF
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None


def pull_state_offset(inst, key_ptr, key_len, offset, length):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    v = _state_value(ctx, key, 0)
    try:
        return ctx.tier.pull_range(v, offset, length) & 0xFFFFFFFF
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None


def append_state(inst, key_ptr, key_len, data_ptr, data_len):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    data = bytes(inst.memory.read(data_ptr, data_len))
    try:
        ctx.tier.append(key, data)
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None


def read_appended(inst, key_ptr, key_len, buf_ptr, buf_len):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    try:
        data = ctx.tier.read_appended(key, buf_len)
    except StateError:
        return 0
    n = min(len(data), buf_len)
    if n:
        inst.memory.write(buf_ptr, data[:n])
    return n


# -- local locks ------------------------------------------------------------------

def _local_value(inst, key_ptr, key_len):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    v = ctx.tier.known(key)
    if v is None:
        raise Trap(HOST_ERROR, f"lock on unknown state key {key!r}")
    return v


def lock_state_read(inst, key_ptr, key_len):
    _local_value(inst, key_ptr, key_len).lock.acquire_read()


def unlock_state_read(inst, key_ptr, key_len):
    v = _local_value(inst, key_ptr, key_len)
    try:
        v.lock.release_read()
    except RuntimeError as e:
        raise Trap(HOST_ERROR, str(e)) from None


def lock_state_write(inst, key_ptr, key_len):
    _local_value(inst, key_ptr, key_len).lock.acquire_write()


def unlock_state_write(inst, key_ptr, key_len):
    v = _local_value(inst, key_ptr, key_len)
    try:
        v.lock.release_write()
    except RuntimeError as e:
        raise Trap(HOST_ERROR, str(e)) from None


# -- global locks -------------------------------------------------------------------

def _lock_global(inst, key_ptr, key_len, mode):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    try:
        token = ctx.tier.lock_global(key, mode, GLOBAL_LOCK_TIMEOUT_S)
    except StateError as e:
        raise Trap(HOST_ERROR, str(e)) from None
    if token is None:
        return 1
    ctx.held_locks[(key, mode)] = token
    return 0


def _unlock_global(inst, key_ptr, key_len, mode):
    ctx = _ctx(inst)
    key = _read_str(inst, key_ptr, key_len)
    token = ctx.held_locks.pop((key, mode), None)
    if token is None:
        raise Trap(HOST_ERROR, f"global unlock without a held lock: {key!r}")
    try:
        ctx.tier.unlock_global(key, token)
    except StateError:
        pass    # lease already expired; nothing useful the guest can do


def lock_state_global_read(inst, key_ptr, key_len):
    return _lock_global(inst, key_ptr, key_len, "r")


def unlock_state_global_read(inst, key_ptr, key_len):
    _unlock_global(inst, key_ptr, key_len, "r")


def lock_state_global_write(inst, key_ptr, key_len):
    return _lock_global(inst, key_ptr, key_len, "w")


def unlock_state_global_write(inst, key_ptr, key_len):
    _unlock_global(inst, key_ptr, key_len, "w")


I32 = "i32"

CALLS = {
    "read_call_input": ((I32, I32), (I32,), read_call_input),
    "write_call_output": ((I32, I32), (), write_call_output),
    "chain_call": ((I32, I32, I32, I32), (I32,), chain_call),
    "await_call": ((I32,), (I32,), await_call),
    "get_call_output": ((I32, I32, I32), (I32,), get_call_output),
    "get_state": ((I32, I32, I32), (I32,), get_state),
    "get_state_offset": ((I32, I32, I32, I32), (I32,), get_state_offset),
    "set_state": ((I32, I32, I32, I32), (), set_state),
    "set_state_offset": ((I32, I32, I32, I32, I32), (), set_state_offset),
    "push_state": ((I32, I32), (I32,), push_state),
    "push_state_offset": ((I32, I32, I32, I32), (I32,), push_state_offset),
    "pull_state": ((I32, I32, I32), (I32,), pull_state),
    "pull_state_offset": ((I32, I32, I32, I32), (I32,), pull_state_offset),
    "append_state": ((I32, I32, I32, I32), (), append_state),
    "read_appended": ((I32, I32, I32, I32), (I32,), read_appended),
    "lock_state_read": ((I32, I32), (), lock_state_read),
    "unlock_state_read": ((I32, I32), (), unlock_state_read),
    "lock_state_write": ((I32, I32), (), lock_state_write),
    "unlock_state_write": ((I32, I32), (), unlock_state_write),
    "lock_state_global_read": ((I32, I32), (I32,), lock_state_global_read),
    "unlock_state_global_read": ((I32, I32), (), unlock_state_global_read),
    "lock_state_global_write": ((I32, I32), (I32,), lock_state_global_write),
    "unlock_state_global_write": ((I32, I32), (), unlock_state_global_write),
}
