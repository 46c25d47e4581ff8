"""Shared tier: backend semantics, wire protocol, TCP server, local caching."""

import socket
import struct
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faaslite.errors import (LeaseExpiredError, NotFoundError, RangeError,
                             StateError)
from faaslite.state import (InprocHandle, LocalTier, RemoteHandle,
                            StateBackend, StateServer, StateValue)
from faaslite.state import wire
from faaslite.state.rwlock import RWLock
from faaslite.state.wire import (ST_BAD_REQUEST, ST_BUSY, ST_LEASE_EXPIRED,
                                 ST_MODE_ERROR, ST_NOT_FOUND, ST_OK, ST_RANGE,
                                 WRITE_WHOLE)


# --- backend ----------------------------------------------------------------

def test_backend_write_read_roundtrip():
    b = StateBackend()
    assert b.write("k", 0, b"hello") == (ST_OK, b"")
    assert b.read("k", 0, 5) == (ST_OK, b"hello")
    assert b.read("k", 1, 3) == (ST_OK, b"ell")
    # short read past the end is truncated, not an error
    assert b.read("k", 3, 100) == (ST_OK, b"lo")


def test_backend_statuses():
    b = StateBackend()
    assert b.read("missing", 0, 4)[0] == ST_NOT_FOUND
    assert b.size("missing")[0] == ST_NOT_FOUND
    b.write("k", 0, b"abc")
    assert b.read("k", 10, 1)[0] == ST_RANGE
    # offset == size reads empty, still in range
    assert b.read("k", 3, 1) == (ST_OK, b"")


def test_backend_sparse_write_zero_fills():
    b = StateBackend()
    b.write("k", 8, b"zz")
    assert b.size("k") == (ST_OK, 10)
    assert b.read("k", 0, 10) == (ST_OK, b"\x00" * 8 + b"zz")


def test_backend_write_whole_replaces():
    b = StateBackend()
    b.write("k", 0, b"a much longer original value")
    b.write("k", WRITE_WHOLE, b"tiny")
    assert b.size("k") == (ST_OK, 4)
    assert b.read("k", 0, 100) == (ST_OK, b"tiny")


def test_backend_append_channel():
    b = StateBackend()
    b.append("log", b"one")
    b.append("log", b"two")
    assert b.read_appended("log", 100) == (ST_OK, b"onetwo")
    assert b.read_appended("log", 4) == (ST_OK, b"onet")
    # append keys and linear keys are distinct namespaces
    assert b.read("log", 0, 3)[0] == ST_MODE_ERROR
    b.write("lin", 0, b"x")
    assert b.read_appended("lin", 1)[0] == ST_MODE_ERROR
    assert b.read_appended("nothing", 1)[0] == ST_NOT_FOUND


def test_backend_keys_and_delete():
    b = StateBackend()
    for k in ("a/1", "a/2", "b/1"):
        b.write(k, 0, b"x")
    assert b.keys("a/") == ["a/1", "a/2"]
    b.delete("a/1")
    assert b.keys() == ["a/2", "b/1"]


# --- global locks -----------------------------------------------------------

def test_lock_exclusive_and_shared():
    b = StateBackend(lease_s=30.0)
    st1, t1 = b.lock("k", "w", 0.1)
    assert st1 == ST_OK
    assert b.lock("k", "w", 0.05) == (ST_BUSY, 0)
    assert b.lock("k", "r", 0.05) == (ST_BUSY, 0)
    assert b.unlock("k", t1) == (ST_OK, b"")

    st2, r1 = b.lock("k", "r", 0.1)
    st3, r2 = b.lock("k", "r", 0.1)
    assert (st2, st3) == (ST_OK, ST_OK) and r1 != r2
    assert b.lock("k", "w", 0.05) == (ST_BUSY, 0)
    b.unlock("k", r1)
    b.unlock("k", r2)
    assert b.lock("k", "w", 0.1)[0] == ST_OK


def test_lock_unlock_errors():
    b = StateBackend()
    assert b.unlock("never-locked", 7) == (ST_BAD_REQUEST, b"")
    st1, tok = b.lock("k", "w", 0.1)
    assert b.unlock("k", tok + 999)[0] == ST_LEASE_EXPIRED
    assert b.unlock("k", tok)[0] == ST_OK
    assert b.unlock("k", tok)[0] == ST_LEASE_EXPIRED  # double unlock


def test_lease_expiry_frees_the_lock():
    b = StateBackend(lease_s=0.15)
    _, tok = b.lock("k", "w", 0.1)
    t0 = time.monotonic()
    status, tok2 = b.lock("k", "w", 2.0)   # blocks until the lease lapses
    waited = time.monotonic() - t0
    assert status == ST_OK
    assert waited < 2 * 0.15 + 0.1
    # the original holder's token is dead now
    assert b.unlock("k", tok)[0] == ST_LEASE_EXPIRED
    b.unlock("k", tok2)


def test_rwlock_basics():
    rw = RWLock()
    assert rw.acquire_read(0.1)
    assert rw.acquire_read(0.1)            # shared
    assert not rw.acquire_write(0.05)      # blocked by readers
    rw.release_read()
    rw.release_read()
    assert rw.acquire_write(0.1)
    assert not rw.acquire_read(0.05)       # blocked by writer
    rw.release_write()
    assert rw.acquire_read(0.05)
    rw.release_read()


# --- wire format ------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(opcode=st.integers(1, 8),
       key=st.text(min_size=0, max_size=40),
       offset=st.integers(0, 2 ** 64 - 1),
       payload=st.binary(max_size=200))
def test_wire_request_roundtrip(opcode, key, offset, payload):
    body = wire.encode_request(opcode, key, offset, payload)
    # encode_request includes the length prefix; decode takes the body
    (length,) = struct.unpack(">I", body[:4])
    assert length == len(body) - 4
    got = wire.decode_request(body[4:])
    assert got == (opcode, key, offset, payload)


def test_wire_response_roundtrip():
    raw = wire.encode_response(ST_RANGE, b"detail")
    (length,) = struct.unpack(">I", raw[:4])
    assert raw[4] == ST_RANGE
    assert raw[5:5 + length - 1] == b"detail"


def test_read_frame_over_socketpair():
    a, b = socket.socketpair()
    try:
        a.sendall(wire.encode_response(ST_OK, b"xyz"))
        frame = wire.read_frame(b)
        assert frame == bytes([ST_OK]) + b"xyz"
        a.close()
        assert wire.read_frame(b) is None      # orderly EOF
    finally:
        b.close()


# --- handles ----------------------------------------------------------------

@pytest.fixture(params=["inproc", "remote"])
def handle(request):
    backend = StateBackend(lease_s=0.5)
    if request.param == "inproc":
        h = InprocHandle(backend)
        yield h
        h.close()
    else:
        server = StateServer(backend=backend).start()
        h = RemoteHandle(server.host, server.port)
        yield h
        h.close()
        server.stop()


def test_handle_roundtrip(handle):
    handle.write("k", 0, b"0123456789")
    assert handle.read("k", 2, 4) == b"2345"
    assert handle.size("k") == 10
    handle.write_whole("k", b"ab")
    assert handle.size("k") == 2
    handle.append("log", b"x")
    handle.append("log", b"y")
    assert handle.read_appended("log", 10) == b"xy"


def test_handle_typed_errors(handle):
    with pytest.raises(NotFoundError):
        handle.read("ghost", 0, 1)
    with pytest.raises(NotFoundError):
        handle.size("ghost")
    handle.write("k", 0, b"abc")
    with pytest.raises(RangeError):
        handle.read("k", 50, 1)


def test_handle_locks(handle):
    tok = handle.lock("k", "w", 0.2)
    assert tok is not None
    assert handle.lock("k", "w", 0.05) is None       # busy -> None
    handle.unlock("k", tok)
    tok2 = handle.lock("k", "r", 0.2)
    assert tok2 is not None
    handle.unlock("k", tok2)
    with pytest.raises(LeaseExpiredError):
        handle.unlock("k", tok2)                     # already released


def test_handle_counters_track_payload_only(handle):
    handle.reset_counters()
    handle.write("k", 0, b"x" * 100)
    assert handle.bytes_sent == 100
    got = handle.read("k", 0, 60)
    assert len(got) == 60
    assert handle.bytes_received == 60
    # locks and sizes move no data
    tok = handle.lock("k", "w", 0.2)
    handle.unlock("k", tok)
    handle.size("k")
    assert (handle.bytes_sent, handle.bytes_received) == (100, 60)


def test_remote_many_threads_one_server():
    backend = StateBackend()
    server = StateServer(backend=backend).start()
    errors = []

    def worker(i):
        try:
            h = RemoteHandle(server.host, server.port)
            for j in range(20):
                h.write(f"t{i}", j, bytes([i]))
            assert h.size(f"t{i}") == 20
            h.close()
        except Exception as exc:         # pragma: no cover - diagnostic
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    server.stop()
    assert errors == []


# --- StateValue masks --------------------------------------------------------

def test_value_is_page_rounded():
    v = StateValue("k", 5000)
    assert v.size == 5000
    assert len(v.buf) % 65536 == 0
    assert len(v.buf) >= 5000
    assert v.num_chunks == 2          # 4096-byte chunks covering 5000


def test_range_mask_chunk_cover():
    v = StateValue("k", 4096 * 4)
    assert v.range_mask(0, 1) == 0b0001
    assert v.range_mask(4095, 2) == 0b0011        # straddles the boundary
    assert v.range_mask(4096, 4096) == 0b0010
    assert v.range_mask(0, 4096 * 4) == 0b1111 == v.full_mask()
    assert v.range_mask(0, 0) == 0


# --- LocalTier accounting -----------------------------------------------------

def _tiered(mode="two-tier"):
    backend = StateBackend()
    handle = InprocHandle(backend)
    return backend, handle, LocalTier(handle, chunk_size=4096, mode=mode)


def test_pull_fetches_only_missing_chunks():
    backend, handle, tier = _tiered()
    backend.write("k", 0, bytes(range(256)) * 64)     # 16 KiB global value
    v = tier.value("k", 16384)
    handle.reset_counters()
    data = tier.read(v, 100, 8)
    assert data == (bytes(range(256)) * 64)[100:108]
    assert handle.bytes_received == 4096              # exactly one chunk
    tier.read(v, 0, 4096)                             # same chunk: cached
    assert handle.bytes_received == 4096
    tier.read(v, 4096, 1)
    assert handle.bytes_received == 8192


def test_adjacent_dirty_chunks_push_as_one_run():
    backend, handle, tier = _tiered()
    v = tier.value("k", 4096 * 8)
    tier.write(v, 0, b"a" * 4096 * 3)      # chunks 0..2 dirty
    tier.write(v, 4096 * 6, b"b" * 100)    # chunk 6 dirty
    handle.reset_counters()
    sent = tier.push(v)
    assert sent == 4096 * 4                # 3 coalesced + 1 partial-chunk run
    assert handle.bytes_sent == sent
    assert tier.push(v) == 0               # nothing dirty anymore


def test_write_preserves_unwritten_bytes_of_edge_chunks():
    backend, handle, tier = _tiered()
    backend.write("k", 0, b"G" * 8192)
    v = tier.value("k", 8192)
    tier.write(v, 4000, b"LOCAL")          # middle of chunk 0/1 boundary
    tier.push(v)
    merged = backend.read("k", 0, 8192)[1]
    assert merged[:4000] == b"G" * 4000
    assert merged[4000:4005] == b"LOCAL"
    assert merged[4005:] == b"G" * (8192 - 4005)


def test_data_shipping_moves_whole_values():
    backend, handle, tier = _tiered(mode="data-shipping")
    backend.write("k", 0, b"g" * 8192)
    v = tier.value("k", 8192)
    handle.reset_counters()
    tier.read(v, 0, 1)
    assert handle.bytes_received == 8192   # full pull for a 1-byte read
    tier.write(v, 0, b"x")
    tier.push(v)
    assert handle.bytes_sent == 8192       # full push for a 1-byte write


def test_tier_read_write_bounds_checked():
    _, _, tier = _tiered()
    v = tier.value("k", 100)
    with pytest.raises(StateError):
        tier.read(v, 90, 20)
    with pytest.raises(StateError):
        tier.write(v, -1, b"x")


def test_tier_without_global_handle_is_purely_local():
    tier = LocalTier(None, chunk_size=4096)
    v = tier.value("k", 4096)
    tier.write(v, 0, b"solo")
    assert tier.read(v, 0, 4) == b"solo"
    assert tier.push(v) == 0
    assert tier.bytes_sent == 0 and tier.bytes_received == 0
