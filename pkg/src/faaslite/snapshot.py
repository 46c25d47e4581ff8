"""Snapshot capture and restore.

A snapshot freezes a faaslet after initialisation: the private memory
image, the mutable globals, and enough metadata to refuse a mismatched
restore.  Restoring copies the image into a fresh instance and skips
data segments, global initialisers, and the init entry entirely — that
is the whole trick for fast cold starts.  Resetting rewrites only the
pages an invocation dirtied, which is cheaper again when calls touch a
small working set.

Serialized form (integers big-endian)::

    magic  b"FLSS"            4
    version u16               currently 1
    section count u16
    per section: kind u8, reserved u8, length u64
    section payloads, in table order
    crc32 of everything above, u32

Sections: 1 = metadata (key=value lines, UTF-8), 2 = globals (per
global: valtype byte + 8 raw bytes), 3 = memory image.  Unknown section
kinds are ignored on read so the format can grow.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from hashlib import sha256

from .errors import SnapshotFormatError, SnapshotMismatchError
from .sandbox import CompiledFunction, Faaslet
from .wasm.opcodes import PAGE_SIZE

MAGIC = b"FLSS"
VERSION = 1

SECT_META = 1
SECT_GLOBALS = 2
SECT_MEMORY = 3

_VT_CODE = {"i32": 0x7F, "i64": 0x7E, "f32": 0x7D, "f64": 0x7C}
_VT_NAME = {v: k for k, v in _VT_CODE.items()}


def snapshot_key(user: str, name: str) -> str:
    return f"__snapshots/{user}/{name}"


@dataclass
class Snapshot:
    user: str
    name: str
    module_digest: str           # sha256 hex of the module binary
    memory_image: bytes          # page-granular private image
    global_types: tuple          # valtype per global, module order
    global_values: tuple

    @property
    def pages(self) -> int:
        return len(self.memory_image) // PAGE_SIZE


def module_digest(raw: bytes) -> str:
    return sha256(raw).hexdigest()


def capture(faaslet: Faaslet) -> Snapshot:
    """Freeze the faaslet's current private memory and globals.

    Refused while shared regions are mapped: a snapshot must be
    position-independent, and mapped regions bake absolute bases into
    guest pointers.
    """
    if faaslet.mapped_regions:
        raise SnapshotMismatchError(
            "cannot capture with shared regions mapped; unmap first")
    inst = faaslet.instance
    fdef = faaslet.fdef
    return Snapshot(
        user=fdef.user,
        name=fdef.name,
        module_digest=module_digest(fdef.raw),
        memory_image=bytes(inst.memory.private),
        global_types=tuple(g.valtype for g in inst.module.globals),
        global_values=tuple(inst.globals),
    )


def restore(cfn: CompiledFunction, snap: Snapshot) -> Faaslet:
    """Build a faaslet from a snapshot: one image copy, no init."""
    if snap.module_digest != module_digest(cfn.fdef.raw):
        raise SnapshotMismatchError(
            f"snapshot {snap.user}/{snap.name} was taken from a different "
            "module build")
    return Faaslet(cfn, image=snap.memory_image,
                   global_values=list(snap.global_values))


def reset(faaslet: Faaslet, snap: Snapshot) -> int:
    """Return a used faaslet to the snapshot state in place.

    Compares memory page by page and rewrites only dirty ones; globals
    are always restored.  Mapped regions are dropped (their bases are
    meaningless after the rollback).  Returns the number of pages
    rewritten.
    """
    if snap.module_digest != module_digest(faaslet.fdef.raw):
        raise SnapshotMismatchError("snapshot/module mismatch on reset")
    faaslet.unmap_all_regions()
    faaslet.brk = None
    if faaslet.ctx is not None:
        faaslet.ctx.forget_mappings()
    mem = faaslet.instance.memory
    image = snap.memory_image
    pages = snap.pages
    if mem.private_pages != pages:
        mem.reset_private(image)
        rewritten = pages
    else:
        view = mem.private
        rewritten = 0
        for p in range(pages):
            off = p * PAGE_SIZE
            chunk = image[off:off + PAGE_SIZE]
            if view[off:off + PAGE_SIZE] != chunk:
                view[off:off + PAGE_SIZE] = chunk
                rewritten += 1
    faaslet.instance.globals[:] = snap.global_values
    return rewritten


# --- serialization ----------------------------------------------------------

def serialize(snap: Snapshot) -> bytes:
    meta = "".join(f"{k}={v}\n" for k, v in (
        ("user", snap.user),
        ("name", snap.name),
        ("digest", snap.module_digest),
        ("pages", snap.pages),
    )).encode()
    glob = bytearray()
    for vt, val in zip(snap.global_types, snap.global_values):
        glob.append(_VT_CODE[vt])
        if vt in ("f32", "f64"):
            glob += struct.pack("<d", val)
        else:
            glob += struct.pack("<Q", val)
    sections = [(SECT_META, meta), (SECT_GLOBALS, bytes(glob)),
                (SECT_MEMORY, snap.memory_image)]
    head = bytearray()
    head += MAGIC
    head += struct.pack(">HH", VERSION, len(sections))
    for kind, payload in sections:
        head += struct.pack(">BBQ", kind, 0, len(payload))
    body = b"".join(p for _, p in sections)
    blob = bytes(head) + body
    return blob + struct.pack(">I", zlib.crc32(blob))


def deserialize(blob: bytes) -> Snapshot:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise SnapshotFormatError("not a snapshot blob")
    crc = struct.unpack(">I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != crc:
        raise SnapshotFormatError("snapshot checksum mismatch")
    version, nsect = struct.unpack(">HH", blob[4:8])
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    pos = 8
    table = []
    for _ in range(nsect):
        if pos + 10 > len(blob) - 4:
            raise SnapshotFormatError("truncated section table")
        kind, _resv, length = struct.unpack(">BBQ", blob[pos:pos + 10])
        table.append((kind, length))
        pos += 10
    sections = {}
    for kind, length in table:
        if pos + length > len(blob) - 4:
            raise SnapshotFormatError("truncated section payload")
        sections[kind] = blob[pos:pos + length]
        pos += length
    if pos != len(blob) - 4:
        raise SnapshotFormatError("trailing bytes after sections")
    for required in (SECT_META, SECT_GLOBALS, SECT_MEMORY):
        if required not in sections:
            raise SnapshotFormatError(f"missing section {required}")

    meta = {}
    for line in sections[SECT_META].decode().splitlines():
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    image = sections[SECT_MEMORY]
    if len(image) % PAGE_SIZE:
        raise SnapshotFormatError("memory image is not page-granular")
    if int(meta.get("pages", -1)) != len(image) // PAGE_SIZE:
        raise SnapshotFormatError("page count disagrees with image size")

    graw = sections[SECT_GLOBALS]
    if len(graw) % 9:
        raise SnapshotFormatError("malformed globals section")
    types = []
    values = []
    for i in range(0, len(graw), 9):
        vt = _VT_NAME.get(graw[i])
        if vt is None:
            raise SnapshotFormatError(f"unknown global valtype {graw[i]:#x}")
        types.append(vt)
        if vt in ("f32", "f64"):
            values.append(struct.unpack("<d", graw[i + 1:i + 9])[0])
        else:
            values.append(struct.unpack("<Q", graw[i + 1:i + 9])[0])
    return Snapshot(meta.get("user", ""), meta.get("name", ""),
                    meta.get("digest", ""), image,
                    tuple(types), tuple(values))


# --- publication through the state tier --------------------------------------

def publish(handle, snap: Snapshot) -> str:
    """Write the serialized snapshot to the shared tier; returns its key."""
    key = snapshot_key(snap.user, snap.name)
    handle.write_whole(key, serialize(snap))
    return key


def fetch(handle, user: str, name: str) -> Snapshot:
    key = snapshot_key(user, name)
    blob = handle.read(key, 0, handle.size(key))
    return deserialize(blob)
