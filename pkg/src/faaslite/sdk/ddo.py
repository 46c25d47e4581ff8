"""Byte layouts for state-resident data objects.

Guests and hosts share these encodings through plain state keys:

* dense f64 vector — little-endian doubles, index * 8 addressing, the
  natural shape for a weights vector updated in place through a mapped
  region (read raw, write raw, mark dirty via a ranged set, push).

* sparse column matrix — ``u32 ncols``, then per column a ``(u32
  offset, u32 count)`` pair into an entries area of 12-byte ``(u32 row,
  f64 value)`` records.  Offsets are bytes relative to the entries
  area, and the encoder pads so no column's run straddles a chunk
  boundary: pulling or pushing one column then touches exactly the
  chunks that hold it, never a neighbour's.
"""

from __future__ import annotations

import random
import struct

CHUNK = 4096
_ENTRY = struct.Struct("<Id")
ENTRY_SIZE = _ENTRY.size          # 12: u32 row + f64 value
_COL = struct.Struct("<II")


def encode_f64_vector(values) -> bytes:
    return struct.pack(f"<{len(values)}d", *values)


def decode_f64_vector(raw: bytes) -> list:
    n = len(raw) // 8
    return list(struct.unpack(f"<{n}d", raw[:n * 8]))


def entries_base(ncols: int) -> int:
    """Byte offset where the entries area starts, chunk-aligned so the
    column table and the entries never share a chunk."""
    header = 4 + 8 * ncols
    return (header + CHUNK - 1) // CHUNK * CHUNK


def encode_sparse_columns(columns, chunk_size: int = CHUNK) -> bytes:
    """``columns`` is a list of [(row, value), ...] per column."""
    ncols = len(columns)
    base = entries_base(ncols)
    table = bytearray()
    entries = bytearray()
    for col in columns:
        run = len(col) * ENTRY_SIZE
        if run > chunk_size:
            raise ValueError(f"column of {len(col)} entries exceeds one "
                             f"chunk ({chunk_size} bytes)")
        room = chunk_size - (len(entries) % chunk_size)
        if run > room:
            entries.extend(bytes(room))       # pad to the next chunk
        off = len(entries)
        for row, val in col:
            entries += _ENTRY.pack(row, val)
        table += _COL.pack(off, len(col))
    blob = bytearray(struct.pack("<I", ncols))
    blob += table
    blob += bytes(base - len(blob))
    blob += entries
    return bytes(blob)


def decode_sparse_columns(raw: bytes) -> list:
    (ncols,) = struct.unpack_from("<I", raw)
    base = entries_base(ncols)
    out = []
    for c in range(ncols):
        off, cnt = _COL.unpack_from(raw, 4 + c * 8)
        col = []
        for i in range(cnt):
            row, val = _ENTRY.unpack_from(raw, base + off + i * ENTRY_SIZE)
            col.append((row, val))
        out.append(col)
    return out


def make_regression(n_features: int, n_examples: int, nnz_per_col: int,
                    *, seed: int = 0, noise: float = 0.0):
    """Synthetic sparse least-squares problem.

    Returns (columns, labels, true_weights): each column is one example
    with ``nnz_per_col`` active features; labels are the true linear
    response plus optional gaussian noise."""
    rng = random.Random(seed)
    true_w = [rng.uniform(-1.0, 1.0) for _ in range(n_features)]
    columns = []
    labels = []
    for _ in range(n_examples):
        rows = rng.sample(range(n_features), min(nnz_per_col, n_features))
        rows.sort()
        col = [(r, rng.uniform(-1.0, 1.0)) for r in rows]
        y = sum(true_w[r] * v for r, v in col)
        if noise:
            y += rng.gauss(0.0, noise)
        columns.append(col)
        labels.append(y)
    return columns, labels, true_w
