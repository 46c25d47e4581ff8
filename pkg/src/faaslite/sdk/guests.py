"""Canonical guest modules used by tests and the benchmarks.

Each builder returns module bytes ready for upload.  They are small
enough to read as programs: the point is exercising the host interface
(state mapping, local and global locks, chaining, the heap) from real
guest code rather than from host-side shortcuts.
"""

from __future__ import annotations

from .emit import GuestModule, push_key

_K1 = 0x9E3779B97F4A7C15      # fill pattern multiplier
_K2 = 0xC2B2AE3D27D4EB4F      # probe mixer



def noop() -> bytes:
    g = GuestModule(min_pages=1, max_pages=4)
    f = g.main()
    f.op("i32.const", 0)
    return g.build()


def echo(buf_size: int = 65536) -> bytes:
    g = GuestModule(min_pages=2, max_pages=8)
    ri = g.faasm("read_call_input")
    wo = g.faasm("write_call_output")
    buf = 65536                      # second page: the whole echo buffer
    f = g.main()
    n = f.local("i32")
    f.op("i32.const", buf)
    f.op("i32.const", buf_size)
    f.op("call", ri)
    f.op("local.set", n)
    f.op("i32.const", buf)
    f.op("local.get", n)
    f.op("call", wo)
    f.op("i32.const", 0)
    return g.build()


def counter_local(key: str = "ctr") -> bytes:
    """Input: u32 iteration count.  Each iteration takes the value's
    local write lock, bumps the first 8 bytes through the mapped
    region, and marks the write — never pushing, so co-located callers
    cooperate purely through shared memory."""
    g = GuestModule(min_pages=1, max_pages=4)
    ri = g.faasm("read_call_input")
    gs = g.faasm("get_state")
    sso = g.faasm("set_state_offset")
    lkw = g.faasm("lock_state_write")
    ulw = g.faasm("unlock_state_write")
    k = g.string(key)

    f = g.main()
    n = f.local("i32")
    ptr = f.local("i32")
    v = f.local("i64")

    f.op("i32.const", 0); f.op("i32.const", 4); f.op("call", ri)
    f.op("drop")
    f.op("i32.const", 0); f.op("i32.load"); f.op("local.set", n)

    push_key(f, k); f.op("i32.const", 8); f.op("call", gs)
    f.op("local.set", ptr)

    f.block()
    f.loop()
    f.op("local.get", n); f.op("i32.eqz"); f.op("br_if", 1)

    push_key(f, k); f.op("call", lkw)
    f.op("local.get", ptr); f.op("i64.load")
    f.op("i64.const", 1); f.op("i64.add"); f.op("local.set", v)
    f.op("local.get", ptr); f.op("local.get", v); f.op("i64.store")
    push_key(f, k)
    f.op("i32.const", 0)            # offset
    f.op("local.get", ptr); f.op("i32.const", 8)
    f.op("call", sso)
    push_key(f, k); f.op("call", ulw)

    f.op("local.get", n); f.op("i32.const", 1); f.op("i32.sub")
    f.op("local.set", n)
    f.op("br", 0)
    f.end()
    f.end()
    f.op("i32.const", 0)
    return g.build()


def counter_global(key: str = "gctr") -> bytes:
    """Input: u32 iteration count.  Each iteration holds the key's
    global write lock around a pull / modify / mark / push cycle, the
    cross-node version of :func:`counter_local`."""
    g = GuestModule(min_pages=1, max_pages=4)
    ri = g.faasm("read_call_input")
    gs = g.faasm("get_state")
    sso = g.faasm("set_state_offset")
    pull = g.faasm("pull_state")
    push = g.faasm("push_state")
    glw = g.faasm("lock_state_global_write")
    ulw = g.faasm("unlock_state_global_write")
    k = g.string(key)

    f = g.main()
    n = f.local("i32")
    ptr = f.local("i32")
    v = f.local("i64")

    f.op("i32.const", 0); f.op("i32.const", 4); f.op("call", ri)
    f.op("drop")
    f.op("i32.const", 0); f.op("i32.load"); f.op("local.set", n)

    push_key(f, k); f.op("i32.const", 8); f.op("call", gs)
    f.op("local.set", ptr)

    f.block()
    f.loop()
    f.op("local.get", n); f.op("i32.eqz"); f.op("br_if", 1)

    # spin until the global lock is ours
    f.block()
    f.loop()
    push_key(f, k); f.op("call", glw)
    f.op("i32.eqz"); f.op("br_if", 1)
    f.op("br", 0)
    f.end()
    f.end()

    push_key(f, k); f.op("i32.const", 8); f.op("call", pull); f.op("drop")
    f.op("local.get", ptr); f.op("i64.load")
    f.op("i64.const", 1); f.op("i64.add"); f.op("local.set", v)
    f.op("local.get", ptr); f.op("local.get", v); f.op("i64.store")
    push_key(f, k)
    f.op("i32.const", 0)
    f.op("local.get", ptr); f.op("i32.const", 8)
    f.op("call", sso)
    push_key(f, k); f.op("call", push); f.op("drop")
    push_key(f, k); f.op("call", ulw)

    f.op("local.get", n); f.op("i32.const", 1); f.op("i32.sub")
    f.op("local.set", n)
    f.op("br", 0)
    f.end()
    f.end()
    f.op("i32.const", 0)
    return g.build()


def heavy_init(fill_pages: int = 512, *, stride_slots: int = 8,
               probes: int = 16) -> bytes:
    """A function whose init builds a large deterministic table.

    ``_faasm_init`` grows the heap by ``fill_pages`` pages and writes a
    position-dependent pattern every ``stride_slots`` 8-byte slots —
    real work a restored image gets to skip.  ``_faasm_main`` hashes
    its 8-byte input against ``probes`` pseudo-random table cells, so
    identical outputs mean an identical table."""
    g = GuestModule(min_pages=1, max_pages=None)
    ri = g.faasm("read_call_input")
    wo = g.faasm("write_call_output")
    sbrk = g.env("sbrk")

    base = 65536                     # heap starts after the first page
    lattice = fill_pages * 8192 // stride_slots   # writable slots
    stride_bytes = stride_slots * 8

    fi = g.init()
    i = fi.local("i32")
    fi.op("i32.const", fill_pages * 65536)
    fi.op("call", sbrk)
    fi.op("i32.const", -1); fi.op("i32.eq")
    fi.if_(("i32",))
    fi.op("i32.const", 1)            # could not grow: init fails
    fi.else_()
    fi.op("i32.const", 0); fi.op("local.set", i)
    fi.block()
    fi.loop()
    fi.op("local.get", i); fi.op("i32.const", lattice)
    fi.op("i32.ge_u"); fi.op("br_if", 1)
    # address = base + i * stride_bytes
    fi.op("i32.const", base)
    fi.op("local.get", i); fi.op("i32.const", stride_bytes)
    fi.op("i32.mul"); fi.op("i32.add")
    # value = (i + 1) * K1
    fi.op("local.get", i); fi.op("i64.extend_i32_u")
    fi.op("i64.const", 1); fi.op("i64.add")
    fi.op("i64.const", _K1); fi.op("i64.mul")
    fi.op("i64.store")
    fi.op("local.get", i); fi.op("i32.const", 1); fi.op("i32.add")
    fi.op("local.set", i)
    fi.op("br", 0)
    fi.end()
    fi.end()
    fi.op("i32.const", 0)
    fi.end()

    f = g.main()
    j = f.local("i32")
    idx = f.local("i32")
    h = f.local("i64")

    f.op("i32.const", 0); f.op("i32.const", 8); f.op("call", ri)
    f.op("drop")
    f.op("i32.const", 0); f.op("i64.load")
    f.op("i64.const", 0x517CC1B727220A95); f.op("i64.xor")
    f.op("local.set", h)

    f.op("i32.const", 0); f.op("local.set", j)
    f.block()
    f.loop()
    f.op("local.get", j); f.op("i32.const", probes)
    f.op("i32.ge_u"); f.op("br_if", 1)
    # idx = ((h >> 7) mod lattice) — pick a lattice cell
    f.op("local.get", h); f.op("i64.const", 7); f.op("i64.shr_u")
    f.op("i32.wrap_i64")
    f.op("i32.const", lattice); f.op("i32.rem_u")
    f.op("local.set", idx)
    # h = (h xor table[idx]) * K2
    f.op("local.get", h)
    f.op("i32.const", base)
    f.op("local.get", idx); f.op("i32.const", stride_bytes)
    f.op("i32.mul"); f.op("i32.add")
    f.op("i64.load")
    f.op("i64.xor")
    f.op("i64.const", _K2); f.op("i64.mul")
    f.op("local.set", h)
    f.op("local.get", j); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", j)
    f.op("br", 0)
    f.end()
    f.end()

    f.op("i32.const", 16); f.op("local.get", h); f.op("i64.store")
    f.op("i32.const", 16); f.op("i32.const", 8); f.op("call", wo)
    f.op("i32.const", 0)
    return g.build()


def heavy_init_reference(input_value: int, *, fill_pages: int = 512,
                         stride_slots: int = 8, probes: int = 16) -> int:
    """Host-side mirror of :func:`heavy_init`'s main, for equivalence
    checks without trusting any sandbox."""
    mask = (1 << 64) - 1
    lattice = fill_pages * 8192 // stride_slots
    h = (input_value ^ 0x517CC1B727220A95) & mask
    for _ in range(probes):
        idx = (h >> 7) % lattice
        cell = ((idx + 1) * _K1) & mask
        h = ((h ^ cell) * _K2) & mask
    return h
