"""Frame format for the shared-tier protocol.

Request::

    u32  frame length (everything after this field)
    u8   opcode
    u16  key length, then the key (UTF-8)
    u64  offset       (operation-specific, see below)
    u32  payload length, then the payload

Response::

    u32  frame length
    u8   status
    payload

All integers big-endian.  Field reuse per opcode:

========  =======================  ==========================
opcode    offset field             payload
========  =======================  ==========================
READ      read offset              u32 requested length
WRITE     write offset or          bytes to write
          WRITE_WHOLE sentinel
APPEND    (zero)                   bytes to append
READAPP   (zero)                   u32 requested length
SIZE      (zero)                   (empty); response: u64
LOCKR/W   timeout in ms            (empty); response: u64 token
UNLOCK    holder token             (empty)
========  =======================  ==========================
"""

from __future__ import annotations

import struct

OP_READ = 1
OP_WRITE = 2
OP_APPEND = 3
OP_READAPP = 4
OP_SIZE = 5
OP_LOCKR = 6
OP_LOCKW = 7
OP_UNLOCK = 8

ST_OK = 0
ST_NOT_FOUND = 1
ST_RANGE = 2
ST_BUSY = 3
ST_LEASE_EXPIRED = 4
ST_BAD_REQUEST = 5
ST_MODE_ERROR = 6
ST_INTERNAL = 7

STATUS_NAMES = {
    ST_OK: "ok", ST_NOT_FOUND: "not_found", ST_RANGE: "range",
    ST_BUSY: "busy", ST_LEASE_EXPIRED: "lease_expired",
    ST_BAD_REQUEST: "bad_request", ST_MODE_ERROR: "mode_error",
    ST_INTERNAL: "internal",
}

WRITE_WHOLE = 0xFFFF_FFFF_FFFF_FFFF

MAX_FRAME = 256 * 1024 * 1024


def encode_request(opcode: int, key: str, offset: int, payload: bytes) -> bytes:
    kb = key.encode()
    body = struct.pack(">BH", opcode, len(kb)) + kb \
        + struct.pack(">QI", offset, len(payload)) + payload
    return struct.pack(">I", len(body)) + body


def decode_request(body: bytes):
    """Parse one request body (without the length prefix)."""
    if len(body) < 3:
        raise ValueError("short request")
    opcode, klen = struct.unpack_from(">BH", body)
    pos = 3 + klen
    if len(body) < pos + 12:
        raise ValueError("short request header")
    key = body[3:pos].decode()
    offset, plen = struct.unpack_from(">QI", body, pos)
    pos += 12
    if len(body) != pos + plen:
        raise ValueError("payload length mismatch")
    return opcode, key, offset, body[pos:]


def encode_response(status: int, payload: bytes = b"") -> bytes:
    return struct.pack(">I", 1 + len(payload)) + bytes([status]) + payload


def read_frame(sock) -> bytes | None:
    """Read one length-prefixed frame; None on clean EOF at a boundary."""
    head = _read_exact(sock, 4)
    if head is None:
        return None
    (n,) = struct.unpack(">I", head)
    if n > MAX_FRAME:
        raise ValueError(f"frame of {n} bytes exceeds the limit")
    body = _read_exact(sock, n)
    if body is None and n:
        raise ConnectionError("peer closed mid-frame")
    return body if body is not None else b""


def _read_exact(sock, n: int) -> bytes | None:
    parts = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if parts:
                raise ConnectionError("peer closed mid-frame")
            return None
        parts.append(chunk)
        got += len(chunk)
    return b"".join(parts)
