"""The ``wasi_snapshot_preview1`` namespace, filesystem-and-clock subset.

Enough of the standard ABI for compiled guests to do buffered stdio,
scratch files, and time/randomness.  Files live in the per-call virtual
filesystem; stdout and stderr are captured into the context.  Errno
values follow the standard numbering.
"""

from __future__ import annotations

import struct
import time

from ..wasm.interp import HOST_ERROR, Trap
from .vfs import PathError

ERRNO_SUCCESS = 0
ERRNO_ACCES = 2
ERRNO_BADF = 8
ERRNO_EXIST = 20
ERRNO_INVAL = 28
ERRNO_IO = 29
ERRNO_NOENT = 44
ERRNO_NOTCAPABLE = 76

OFLAG_CREAT = 1
OFLAG_DIRECTORY = 2
OFLAG_EXCL = 4
OFLAG_TRUNC = 8

RIGHT_FD_READ = 1 << 1
RIGHT_FD_WRITE = 1 << 6

FILETYPE_CHAR_DEVICE = 2
FILETYPE_DIRECTORY = 3
FILETYPE_REGULAR = 4


def _ctx(inst):
    owner = inst.owner
    if owner is None or owner.ctx is None:
        raise Trap(HOST_ERROR, "host call outside a call context")
    return owner.ctx


class _File:
    """An open regular file: path + write capability.  Content lookups
    go through the vfs on every access so co-open fds stay coherent."""

    __slots__ = ("path", "vfs", "writable")

    def __init__(self, path, vfs, writable):
        self.path = path
        self.vfs = vfs
        self.writable = writable

    def size(self) -> int:
        try:
            return self.vfs.stat(self.path)
        except FileNotFoundError:
            return 0

    def read_at(self, pos: int, n: int) -> bytes:
        try:
            data = self.vfs.open_for_read(self.path)
        except FileNotFoundError:
            return b""
        return data[pos:pos + n]

    def write_at(self, pos: int, data: bytes) -> int:
        buf = self.vfs.open_for_write(self.path, create=True, truncate=False)
        end = pos + len(data)
        if end > len(buf):
            buf.extend(bytes(end - len(buf)))
        buf[pos:end] = data
        return len(data)


def _iovs(inst, iov_ptr, iov_cnt):
    out = []
    for i in range(iov_cnt):
        base, ln = struct.unpack("<II", inst.memory.read(iov_ptr + 8 * i, 8))
        out.append((base, ln))
    return out


def fd_write(inst, fd, iov_ptr, iov_cnt, nwritten_ptr):
    ctx = _ctx(inst)
    e = ctx.fds.get(fd)
    if e is None:
        return ERRNO_BADF
    total = 0
    if e.kind in ("stdout", "stderr"):
        for base, ln in _iovs(inst, iov_ptr, iov_cnt):
            ctx.stdout += inst.memory.read(base, ln)
            total += ln
    elif e.kind == "file":
        f: _File = e.obj
        if not f.writable:
            return ERRNO_ACCES
        for base, ln in _iovs(inst, iov_ptr, iov_cnt):
            f.write_at(e.pos, bytes(inst.memory.read(base, ln)))
            e.pos += ln
            total += ln
    else:
        return ERRNO_BADF
    inst.memory.write(nwritten_ptr, struct.pack("<I", total))
    return ERRNO_SUCCESS


def fd_read(inst, fd, iov_ptr, iov_cnt, nread_ptr):
    ctx = _ctx(inst)
    e = ctx.fds.get(fd)
    if e is None:
        return ERRNO_BADF
    total = 0
    if e.kind == "stdin":
        pass                        # immediate EOF
    elif e.kind == "file":
        f: _File = e.obj
        for base, ln in _iovs(inst, iov_ptr, iov_cnt):
            data = f.read_at(e.pos, ln)
            if data:
                inst.memory.write(base, data)
                e.pos += len(data)
                total += len(data)
            if len(data) < ln:
                break
    else:
        return ERRNO_BADF
    inst.memory.write(nread_ptr, struct.pack("<I", total))
    return ERRNO_SUCCESS


def path_open(inst, dirfd, dirflags, path_ptr, path_len, oflags,
              rights_base, rights_inheriting, fdflags, opened_fd_ptr):
    ctx = _ctx(inst)
    d = ctx.fds.get(dirfd)
    if d is None or d.kind != "dir":
        return ERRNO_BADF
    if oflags & OFLAG_DIRECTORY:
        return ERRNO_INVAL
    try:
        path = inst.memory.read(path_ptr, path_len).decode()
    except UnicodeDecodeError:
        return ERRNO_INVAL
    writable = bool(rights_base & RIGHT_FD_WRITE) \
        or bool(oflags & (OFLAG_CREAT | OFLAG_TRUNC))
    try:
        exists = ctx.vfs.exists(path)
        if exists and (oflags & OFLAG_EXCL):
            return ERRNO_EXIST
        if writable:
            ctx.vfs.open_for_write(path, create=bool(oflags & OFLAG_CREAT),
                                   truncate=bool(oflags & OFLAG_TRUNC))
        else:
            ctx.vfs.open_for_read(path)
    except PathError:
        return ERRNO_NOTCAPABLE
    except FileNotFoundError:
        return ERRNO_NOENT
    from .context import FDEntry
    fd = ctx.fds.add(FDEntry("file", _File(path, ctx.vfs, writable)))
    inst.memory.write(opened_fd_ptr, struct.pack("<I", fd))
    return ERRNO_SUCCESS


def fd_close(inst, fd):
    ctx = _ctx(inst)
    return ERRNO_SUCCESS if ctx.fds.close(fd) else ERRNO_BADF


def fd_seek(inst, fd, offset, whence, newoffset_ptr):
    ctx = _ctx(inst)
    e = ctx.fds.get(fd)
    if e is None or e.kind != "file":
        return ERRNO_BADF
    off = offset - (1 << 64) if offset >= (1 << 63) else offset
    if whence == 0:
        pos = off
    elif whence == 1:
        pos = e.pos + off
    elif whence == 2:
        pos = e.obj.size() + off
    else:
        return ERRNO_INVAL
    if pos < 0:
        return ERRNO_INVAL
    e.pos = pos
    inst.memory.write(newoffset_ptr, struct.pack("<Q", pos))
    return ERRNO_SUCCESS


def _filestat(filetype: int, size: int) -> bytes:
    return struct.pack("<QQB7xQQQQQ", 0, 0, filetype, 1, size, 0, 0, 0)


def fd_filestat_get(inst, fd, buf_ptr):
    ctx = _ctx(inst)
    e = ctx.fds.get(fd)
    if e is None:
        return ERRNO_BADF
    if e.kind == "file":
        st = _filestat(FILETYPE_REGULAR, e.obj.size())
    elif e.kind == "dir":
        st = _filestat(FILETYPE_DIRECTORY, 0)
    else:
        st = _filestat(FILETYPE_CHAR_DEVICE, 0)
    inst.memory.write(buf_ptr, st)
    return ERRNO_SUCCESS


def path_filestat_get(inst, dirfd, flags, path_ptr, path_len, buf_ptr):
    ctx = _ctx(inst)
    d = ctx.fds.get(dirfd)
    if d is None or d.kind != "dir":
        return ERRNO_BADF
    try:
        path = inst.memory.read(path_ptr, path_len).decode()
        size = ctx.vfs.stat(path)
    except UnicodeDecodeError:
        return ERRNO_INVAL
    except PathError:
        return ERRNO_NOTCAPABLE
    except FileNotFoundError:
        return ERRNO_NOENT
    inst.memory.write(buf_ptr, _filestat(FILETYPE_REGULAR, size))
    return ERRNO_SUCCESS


def fd_renumber(inst, fd_from, fd_to):
    ctx = _ctx(inst)
    if fd_to <= 3 or fd_from <= 3:
        return ERRNO_BADF
    return ERRNO_SUCCESS if ctx.fds.renumber(fd_from, fd_to) else ERRNO_BADF


def clock_time_get(inst, clock_id, precision, time_ptr):
    if clock_id == 0:
        ns = time.time_ns()
    elif clock_id == 1:
        ns = time.monotonic_ns()
    else:
        return ERRNO_INVAL
    inst.memory.write(time_ptr, struct.pack("<Q", ns & (2 ** 64 - 1)))
    return ERRNO_SUCCESS


def random_get(inst, buf_ptr, buf_len):
    ctx = _ctx(inst)
    if buf_len:
        inst.memory.write(buf_ptr, ctx.rng.randbytes(buf_len))
    return ERRNO_SUCCESS


I32, I64 = "i32", "i64"

CALLS = {
    "fd_write": ((I32, I32, I32, I32), (I32,), fd_write),
    "fd_read": ((I32, I32, I32, I32), (I32,), fd_read),
    "path_open": ((I32, I32, I32, I32, I32, I64, I64, I32, I32), (I32,),
                  path_open),
    "fd_close": ((I32,), (I32,), fd_close),
    "fd_seek": ((I32, I64, I32, I32), (I32,), fd_seek),
    "fd_filestat_get": ((I32, I32), (I32,), fd_filestat_get),
    "path_filestat_get": ((I32, I32, I32, I32, I32), (I32,),
                          path_filestat_get),
    "fd_renumber": ((I32, I32), (I32,), fd_renumber),
    "clock_time_get": ((I32, I64, I32), (I32,), clock_time_get),
    "random_get": ((I32, I32), (I32,), random_get),
}
