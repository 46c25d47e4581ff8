"""End-to-end acceptance checks — one test per shipped guarantee.

Every test here drives the system through its public surface (guest
bytecode, nodes, benches) and holds it to the numbers we advertise:
isolation that survives probing, zero-copy co-located state, exact
chunk accounting, order-of-magnitude snapshot wins, warm-host routing,
and a host interface where every call has a conformance exercise.

Each test prints a one-line scorecard entry and enforces its own wall
ceiling, so ``pytest -v tests/test_acceptance.py`` doubles as the
release report.
"""

import gc
import hashlib
import itertools
import random
import socket
import statistics
import struct
import threading
import time

import pytest

from faaslite.bench import LocalCluster, run_churn, run_coldstart, run_sgd
from faaslite.hostiface import NAMESPACES, CallContext, VirtualFS, resolver
from faaslite.node import Node, NodeConfig
from faaslite.sandbox import CompiledFunction, Faaslet, FunctionDef
from faaslite.scheduler import (COLD_START, EXECUTE_LOCAL, MAX_HOPS, SHARE,
                                Scheduler)
from faaslite.sdk import (GuestModule, counter_global, counter_local, echo,
                          make_regression, noop, sgd)
from faaslite.sdk.emit import push_key
from faaslite.snapshot import capture, reset, restore
from faaslite.state import (DATA_SHIPPING, TWO_TIER, InprocHandle, LocalTier,
                            StateBackend)

PAGE = 65536
CHUNK = 4096

_seq = itertools.count(1)


# --- rigging -------------------------------------------------------------------

def compile_guest(raw, *, limit_pages=None):
    if limit_pages is None:
        fdef = FunctionDef("acc", "g", raw)
    else:
        fdef = FunctionDef("acc", "g", raw, memory_limit_pages=limit_pages)
    return CompiledFunction.compile(fdef, resolver)


def attach(faaslet, *, tier=None, backend=None, **ctx_kw):
    if tier is None:
        tier = LocalTier(InprocHandle(backend if backend is not None
                                      else StateBackend()))
    CallContext(faaslet, tier, user="acc", call_id=0, **ctx_kw)
    return faaslet


def run(faaslet, input_data=b""):
    faaslet.ctx.begin_call(next(_seq), input_data)
    return faaslet.invoke("_faasm_main")


def ok(faaslet, input_data=b""):
    res = run(faaslet, input_data)
    assert res.trap is None, f"unexpected trap: {res.trap}"
    return res


def vm_rss_bytes() -> int:
    with open("/proc/self/status") as fh:
        for line in fh:
            if line.startswith("VmRSS:"):
                return int(line.split()[1]) * 1024
    raise RuntimeError("VmRSS not reported")


# Bytecode helpers shared by the conformance guests: every check point
# is `condition -> return rc`, so a failing guest names its step.

def _fail_if(f, rc):
    f.if_()
    f.op("i32.const", rc)
    f.op("return")
    f.end()


def _expect_i32(f, want, rc):
    f.op("i32.const", want)
    f.op("i32.ne")
    _fail_if(f, rc)


def _imports_of(g):
    return {f"{mod}.{name}" for (mod, name) in g._imports}


def _sockaddr(host: str, port: int) -> bytes:
    return struct.pack("<H", 2) + struct.pack(">H", port) + \
        socket.inet_aton(host)


class _Server:
    """Loopback TCP helper: 'echo' bounces what it reads, 'sink' drains."""

    def __init__(self, behavior: str):
        self.behavior = behavior
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(4)
        self.addr = self.sock.getsockname()
        self._thread = threading.Thread(target=self._serve, daemon=True)

    def _serve(self):
        while True:
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            with conn:
                try:
                    while True:
                        data = conn.recv(65536)
                        if not data:
                            break
                        if self.behavior == "echo":
                            conn.sendall(data)
                except OSError:
                    pass

    def __enter__(self):
        self._thread.start()
        return self.addr

    def __exit__(self, *exc):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


# --- 1: faults stay inside the sandbox ------------------------------------------

def _oob_guest(kind: str) -> bytes:
    g = GuestModule(min_pages=1, max_pages=4)
    f = g.main()
    f.op("i32.const", 0x7FFF0000)
    if kind == "load":
        f.op("i32.load")
        f.op("drop")
    else:
        f.op("i32.const", 7)
        f.op("i32.store")
    f.op("i32.const", 0)
    return g.build()


def _secret_cell_guest() -> bytes:
    """Two personalities: a 16-byte input is stashed in a fixed cell;
    any other input probes the cell and returns 1 if residue shows."""
    g = GuestModule(min_pages=1, max_pages=4)
    ri = g.faasm("read_call_input")
    slot = g.scratch(16)
    f = g.main()
    n = f.local("i32")
    f.op("i32.const", slot); f.op("i32.const", 16); f.op("call", ri)
    f.op("local.set", n)
    f.op("local.get", n); f.op("i32.const", 16); f.op("i32.eq")
    f.if_()
    f.op("i32.const", 0)
    f.op("return")
    f.end()
    f.op("i32.const", slot); f.op("i64.load")
    f.op("i32.const", slot + 8); f.op("i64.load")
    f.op("i64.or")
    f.op("i64.eqz")
    f.op("i32.const", 1)
    f.op("i32.xor")
    return g.build()


def test_a01_sandbox_contains_faults_and_secrets():
    t0 = time.perf_counter()
    tier = LocalTier(None)

    # wild loads and stores trap; the process shrugs and keeps serving
    for kind in ("load", "store"):
        bad = attach(Faaslet(compile_guest(_oob_guest(kind))), tier=tier)
        res = run(bad)
        assert res.trap is not None and res.trap.kind == "out_of_bounds"
        survivor = attach(Faaslet(compile_guest(noop())), tier=tier)
        assert ok(survivor).return_code == 0

    # a secret written by one instance is invisible to fresh instances
    # and gone after a rewind, across 1000 rounds
    cfn = compile_guest(_secret_cell_guest())
    pristine = capture(Faaslet(cfn))
    holder = attach(Faaslet(cfn), tier=tier)
    probes = 0
    leaks = 0
    for i in range(1000):
        secret = hashlib.sha256(i.to_bytes(4, "little")).digest()[:16]
        assert ok(holder, secret).return_code == 0
        assert ok(holder).return_code == 1      # control: residue is probeable
        fresh = attach(Faaslet(cfn), tier=tier)
        leaks += ok(fresh).return_code
        reset(holder, pristine)
        leaks += ok(holder).return_code
        probes += 2
    assert leaks == 0

    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(f"\n[a01] oob load+store trapped, probes={probes} leaks={leaks} "
          f"elapsed={elapsed:.2f}s")


# --- 2: co-located counters never touch the wire --------------------------------

def test_a02_colocated_state_is_shared_without_traffic():
    t0 = time.perf_counter()
    handle = InprocHandle(StateBackend())
    tier = LocalTier(handle)
    cfn = compile_guest(counter_local())
    faaslets = [attach(Faaslet(cfn), tier=tier) for _ in range(8)]

    failures = []

    def work(fl, seq):
        fl.ctx.begin_call(seq, struct.pack("<I", 1000))
        res = fl.invoke("_faasm_main")
        if res.trap is not None or res.return_code != 0:
            failures.append(res)

    threads = [threading.Thread(target=work, args=(fl, i + 1))
               for i, fl in enumerate(faaslets)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()

    assert not failures, failures
    v = tier.value("ctr", 8)
    total = struct.unpack("<q", tier.read(v, 0, 8))[0]
    assert total == 8 * 1000
    assert handle.bytes_sent == 0 and handle.bytes_received == 0

    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"\n[a02] 8x1000 locked increments -> {total}, tier traffic "
          f"sent={handle.bytes_sent} received={handle.bytes_received} "
          f"elapsed={elapsed:.2f}s")


# --- 3: cross-node counters and crashed-holder recovery -------------------------

def test_a03_global_locks_serialize_nodes_and_leases_expire():
    t0 = time.perf_counter()
    with LocalCluster(3, wire=True) as cluster:
        cluster.upload_everywhere("acc", "gacc", counter_global())
        recs = [None] * 3

        def drive(i):
            recs[i] = cluster.nodes[i].invoke(
                "acc", "gacc", struct.pack("<I", 50), wait_s=50.0)

        threads = [threading.Thread(target=drive, args=(i,))
                   for i in range(3)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()

        for rec in recs:
            assert rec is not None and rec.status == "done"
            assert rec.return_code == 0
        raw = cluster.handle.read("gctr", 0, 8)
        total = struct.unpack("<q", raw)[0]
        assert total == 3 * 50

    # a holder that dies without unlocking only stalls peers one lease
    lease = 0.5
    backend = StateBackend(lease_s=lease)
    h1, h2 = InprocHandle(backend), InprocHandle(backend)
    assert h1.lock("gate", "w", 1.0) is not None    # never unlocked
    t_wait = time.monotonic()
    token = h2.lock("gate", "w", 5.0)
    waited = time.monotonic() - t_wait
    assert token is not None
    assert waited <= 2 * lease, f"recovery took {waited:.3f}s"

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"\n[a03] 3 nodes x 50 -> {total}, lease recovery in "
          f"{waited * 1e3:.0f}ms elapsed={elapsed:.2f}s")


# --- 4: transfers move exactly the chunks they must ------------------------------

def test_a04_partial_reads_move_exactly_the_covering_chunks():
    t0 = time.perf_counter()
    size = 4 * 2 ** 20
    rnd = random.Random(0xA404)
    blob = rnd.randbytes(size)
    backend = StateBackend()
    InprocHandle(backend).write_whole("blob", blob)

    handle = InprocHandle(backend)
    tier = LocalTier(handle)

    trials = [(0, 1), (size - 1, 1), (CHUNK - 1, 2), (0, size)]
    while len(trials) < 100:
        offset = rnd.randrange(size)
        if len(trials) % 2:
            length = rnd.randrange(1, min(8192, size - offset) + 1)
        else:
            length = rnd.randrange(1, size - offset + 1)
        trials.append((offset, length))

    for offset, length in trials:
        tier.forget("blob")
        v = tier.value("blob", size)
        before = handle.bytes_received
        got = tier.read(v, offset, length)
        moved = handle.bytes_received - before
        lo = (offset // CHUNK) * CHUNK
        hi = min(-(-(offset + length) // CHUNK) * CHUNK, size)
        assert moved == hi - lo, (offset, length, moved, hi - lo)
        assert got == blob[offset:offset + length]

    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"\n[a04] {len(trials)} ranged reads over 4 MiB matched the "
          f"chunk-cover model exactly elapsed={elapsed:.2f}s")


# --- 5: snapshot restore beats re-initialization ----------------------------------

def test_a05_restore_is_an_order_faster_than_reinit():
    t0 = time.perf_counter()
    r = run_coldstart(pages=512, repeats=3, equivalence_inputs=100,
                      reset_samples=5)
    assert r["image_bytes"] >= 32 * 2 ** 20
    assert r["mismatches"] == 0, r
    assert r["speedup"] >= 10.0, r

    # a trivial image restores in single-digit milliseconds
    cfn = compile_guest(noop())
    snap = capture(Faaslet(cfn))
    samples = []
    for _ in range(20):
        t = time.perf_counter()
        restore(cfn, snap)
        samples.append((time.perf_counter() - t) * 1e3)
    med = statistics.median(samples)
    assert med < 10.0, samples

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"\n[a05] image={r['image_bytes'] / 2**20:.0f}MiB "
          f"init={r['init_ms']}ms restore={r['restore_ms']}ms "
          f"speedup={r['speedup']}x mismatches={r['mismatches']} "
          f"noop_restore={med:.2f}ms elapsed={elapsed:.2f}s")


# --- 6: churn is served from the snapshot pool ------------------------------------

def test_a06_churn_cold_path_rides_snapshots():
    t0 = time.perf_counter()
    r = run_churn(functions=8, rate=40.0, duration_s=4.0, fill_pages=32,
                  evict_ttl_s=0.4)
    assert r["cold_calls"] > 0, r
    assert r["warm_calls"] > 0, r
    assert r["restore_speedup"] >= 3.0, r

    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"\n[a06] calls={r['calls']} cold={r['cold_calls']} "
          f"warm={r['warm_calls']} init={r['init_ms']}ms "
          f"cold_call={r['cold_call_ms']}ms "
          f"speedup={r['restore_speedup']}x elapsed={elapsed:.2f}s")


# --- 7: placement follows the warmth ----------------------------------------------

def _drain_to(scheds, warm_now, active, entry, call_id):
    """Walk one call through real placement decisions until it lands.
    Returns the landing node and the hop count."""
    nid, hops = entry, 0
    while True:
        p = scheds[nid].decide("acc", "fn", call_id, hops=hops,
                               warm_local=nid in warm_now,
                               active_local=active[nid])
        assert hops <= MAX_HOPS
        if p.action == SHARE:
            assert hops < MAX_HOPS
            assert p.target != nid
            assert p.target in scheds[nid].live_hosts()
            assert p.target in scheds[nid].warm_hosts("acc", "fn")
            nid, hops = p.target, hops + 1
            continue
        if p.action == EXECUTE_LOCAL:
            assert nid in warm_now or hops >= MAX_HOPS, (nid, hops, p)
        else:
            assert p.action == COLD_START
            assert nid not in warm_now
        return nid, hops, p.action


def test_a07_calls_route_to_warm_hosts():
    t0 = time.perf_counter()

    # live cluster: one host warms up, a cold host forwards it everything
    with LocalCluster(2) as cluster:
        cluster.upload_everywhere("acc", "fn", noop())
        first = cluster.nodes[1].invoke("acc", "fn", b"", wait_s=10.0)
        assert first.status == "done" and first.node == "node1"

        sched0 = cluster.nodes[0].scheduler
        deadline = time.monotonic() + 5.0
        while time.monotonic() < deadline:
            if ("node1" in sched0.live_hosts()
                    and "node1" in sched0.warm_hosts("acc", "fn")):
                break
            time.sleep(0.05)
        else:
            pytest.fail("node0 never learned that node1 is warm")

        landed = set()
        for _ in range(100):
            rec = cluster.nodes[0].invoke("acc", "fn", b"", wait_s=10.0)
            assert rec.status == "done" and rec.return_code == 0
            landed.add(rec.node)
        assert landed == {"node1"}, landed

    # exhaustive model walk: advertised warmth (possibly stale), actual
    # warmth, busy bits, entry points — no call is lost, hops stay capped
    names = ("n0", "n1", "n2")
    cap = 2
    frozen = lambda: 1000.0
    calls = 0
    cold_landings = 0
    hop_limit_hits = 0
    for adv_mask in range(8):
        advertised = {names[i] for i in range(3) if adv_mask >> i & 1}
        actual_opts = [set(c) for k in range(len(advertised) + 1)
                       for c in itertools.combinations(sorted(advertised), k)]
        for actual in actual_opts:
            for busy_mask in range(8):
                for entry in names:
                    backend = InprocHandle(StateBackend())
                    scheds = {
                        nid: Scheduler(nid, backend, capacity=cap,
                                       evict_ttl_s=60.0, clock=frozen)
                        for nid in names
                    }
                    for s in scheds.values():
                        s.heartbeat()
                    for nid in sorted(advertised):
                        scheds[nid].register_warm("acc", "fn")
                    active = {names[i]: cap if busy_mask >> i & 1 else 0
                              for i in range(3)}
                    warm_now = set(actual)
                    for seq in range(4):
                        nid, hops, action = _drain_to(
                            scheds, warm_now, active, entry, calls)
                        if action == COLD_START:
                            cold_landings += 1
                            warm_now.add(nid)
                            scheds[nid].register_warm("acc", "fn")
                        if hops == MAX_HOPS:
                            hop_limit_hits += 1
                        calls += 1
    assert calls == 27 * 8 * 3 * 4
    assert cold_landings > 0 and hop_limit_hits > 0

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"\n[a07] 100/100 live calls on the warm host; model walked "
          f"{calls} calls, cold={cold_landings} "
          f"hop_limit={hop_limit_hits}, none lost elapsed={elapsed:.2f}s")


# --- 8: training on two tiers moves half the bytes --------------------------------

def test_a08_two_tier_training_halves_traffic_and_converges():
    t0 = time.perf_counter()
    two = run_sgd(workers=4, epochs=4, nodes=1, mode=TWO_TIER, seed=42)
    data = run_sgd(workers=4, epochs=4, nodes=1, mode=DATA_SHIPPING, seed=42)

    assert two["bytes_total"] <= 0.5 * data["bytes_total"], (two, data)
    assert two["loss_ratio"] <= 0.5, two
    assert data["loss_ratio"] <= 0.5, data

    # the sequential host-side reference agrees that the problem is learnable
    columns, labels, _ = make_regression(128, 256, 8, seed=42)
    ref = sgd.reference_run(columns, labels, 128, workers=4, epochs=4,
                            rate=0.02)
    initial = sgd.loss([0.0] * 128, columns, labels)
    final = sgd.loss(ref, columns, labels)
    assert final <= 0.5 * initial

    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"\n[a08] bytes two-tier={two['bytes_total']} "
          f"data-shipping={data['bytes_total']} "
          f"ratio={two['bytes_total'] / data['bytes_total']:.3f} "
          f"loss {two['loss_ratio']:.3f}/{data['loss_ratio']:.3f} "
          f"reference {final / initial:.3f} elapsed={elapsed:.2f}s")


# --- 9: a resident sandbox costs well under a megabyte ----------------------------

def test_a09_thousand_resident_faaslets_fit():
    t0 = time.perf_counter()
    cfn = compile_guest(noop())
    tier = LocalTier(None)

    # absorb one-time allocator and cache effects before measuring
    warmup = []
    for i in range(32):
        fl = Faaslet(cfn)
        CallContext(fl, tier, user="acc", call_id=i)
        fl.ctx.begin_call(i + 1, b"")
        fl.invoke("_faasm_main")
        warmup.append(fl)
    del warmup

    gc.collect()
    rss0 = vm_rss_bytes()
    kept = []
    for i in range(1000):
        fl = Faaslet(cfn)
        CallContext(fl, tier, user="acc", call_id=i)
        fl.ctx.begin_call(i + 1, b"")
        res = fl.invoke("_faasm_main")
        assert res.trap is None and res.return_code == 0
        kept.append(fl)
    gc.collect()
    rss1 = vm_rss_bytes()

    per = (rss1 - rss0) / len(kept)
    assert per < 1 * 2 ** 20, f"{per / 1024:.0f} KiB per resident sandbox"

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"\n[a09] 1000 resident sandboxes, {per / 1024:.0f} KiB each "
          f"(rss {rss0 >> 20} -> {rss1 >> 20} MiB) elapsed={elapsed:.2f}s")


# --- 10: every host call has a conformance exercise --------------------------------

def _io_guest():
    g = GuestModule(min_pages=1, max_pages=4)
    ri = g.faasm("read_call_input")
    wo = g.faasm("write_call_output")
    a = g.scratch(4096)
    b = g.scratch(4096)
    f = g.main()
    n1 = f.local("i32")
    n2 = f.local("i32")
    i = f.local("i32")
    f.op("i32.const", a); f.op("i32.const", 4096); f.op("call", ri)
    f.op("local.set", n1)
    f.op("i32.const", b); f.op("i32.const", 4096); f.op("call", ri)
    f.op("local.set", n2)
    f.op("local.get", n1); f.op("local.get", n2); f.op("i32.ne")
    _fail_if(f, 1)
    f.op("i32.const", 0); f.op("local.set", i)
    f.block()
    f.loop()
    f.op("local.get", i); f.op("local.get", n1); f.op("i32.ge_u")
    f.op("br_if", 1)
    f.op("local.get", i); f.op("i32.const", a); f.op("i32.add")
    f.op("i32.load8_u")
    f.op("local.get", i); f.op("i32.const", b); f.op("i32.add")
    f.op("i32.load8_u")
    f.op("i32.ne")
    _fail_if(f, 2)
    f.op("local.get", i); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", i)
    f.op("br", 0)
    f.end()
    f.end()
    f.op("i32.const", a); f.op("local.get", n1); f.op("call", wo)
    f.op("i32.const", 0)
    return g.build(), _imports_of(g)


def _chain_guest():
    g = GuestModule(min_pages=1, max_pages=4)
    ch = g.faasm("chain_call")
    aw = g.faasm("await_call")
    go = g.faasm("get_call_output")
    wo = g.faasm("write_call_output")
    leaf = g.string("leaf")
    x = g.string("x")
    y = g.string("y")
    buf = g.scratch(16)
    f = g.main()
    id1 = f.local("i32")
    id2 = f.local("i32")
    push_key(f, leaf); push_key(f, x); f.op("call", ch)
    f.op("local.set", id1)
    push_key(f, leaf); push_key(f, y); f.op("call", ch)
    f.op("local.set", id2)
    f.op("local.get", id1); f.op("call", aw)
    _fail_if(f, 1)
    f.op("local.get", id2); f.op("call", aw)
    _fail_if(f, 2)
    f.op("local.get", id1); f.op("i32.const", buf); f.op("i32.const", 1)
    f.op("call", go)
    _expect_i32(f, 1, 3)
    f.op("local.get", id2); f.op("i32.const", buf + 1); f.op("i32.const", 1)
    f.op("call", go)
    _expect_i32(f, 1, 4)
    f.op("i32.const", buf); f.op("i32.const", 2); f.op("call", wo)
    f.op("i32.const", 0)
    return g.build(), _imports_of(g)


_SENTINEL = 0x1122334455667788


def _state_guest():
    g = GuestModule(min_pages=1, max_pages=8)
    gs = g.faasm("get_state")
    gso = g.faasm("get_state_offset")
    ss = g.faasm("set_state")
    sso = g.faasm("set_state_offset")
    ps = g.faasm("push_state")
    pso = g.faasm("push_state_offset")
    pl = g.faasm("pull_state")
    plo = g.faasm("pull_state_offset")
    ap = g.faasm("append_state")
    ra = g.faasm("read_appended")
    lr = g.faasm("lock_state_read")
    ur = g.faasm("unlock_state_read")
    lw = g.faasm("lock_state_write")
    uw = g.faasm("unlock_state_write")
    glr = g.faasm("lock_state_global_read")
    ugr = g.faasm("unlock_state_global_read")
    glw = g.faasm("lock_state_global_write")
    ugw = g.faasm("unlock_state_global_write")
    k = g.string("conf-value")
    k2 = g.string("conf-whole")
    klog = g.string("conf-log")
    word = g.string("abcd")
    buf = g.scratch(32)
    f = g.main()
    ptr = f.local("i32")
    p2 = f.local("i32")
    v = f.local("i64")

    # map, write through the region, mark, push
    push_key(f, k); f.op("i32.const", 16); f.op("call", gs)
    f.op("local.set", ptr)
    f.op("local.get", ptr); f.op("i64.const", _SENTINEL); f.op("i64.store")
    push_key(f, k); f.op("i32.const", 0)
    f.op("local.get", ptr); f.op("i32.const", 8); f.op("call", sso)
    push_key(f, k); f.op("call", ps)
    f.op("i32.eqz")
    _fail_if(f, 1)

    # an offset view lands inside the same mapping
    push_key(f, k); f.op("i32.const", 8); f.op("i32.const", 8)
    f.op("call", gso)
    f.op("local.set", p2)
    f.op("local.get", p2); f.op("local.get", ptr); f.op("i32.sub")
    _expect_i32(f, 8, 2)

    # clobber locally, pull the pushed bytes back
    f.op("local.get", ptr); f.op("i64.const", 0); f.op("i64.store")
    push_key(f, k); f.op("i32.const", 16); f.op("call", pl)
    f.op("drop")
    f.op("local.get", ptr); f.op("i64.load")
    f.op("i64.const", _SENTINEL); f.op("i64.ne")
    _fail_if(f, 3)

    # ranged mark/push, then ranged clobber/pull
    f.op("local.get", p2); f.op("i64.const", -2); f.op("i64.store")
    push_key(f, k); f.op("i32.const", 8)
    f.op("local.get", p2); f.op("i32.const", 8); f.op("call", sso)
    push_key(f, k); f.op("i32.const", 8); f.op("i32.const", 8)
    f.op("call", pso)
    f.op("i32.eqz")
    _fail_if(f, 4)
    f.op("local.get", p2); f.op("i64.const", 0); f.op("i64.store")
    push_key(f, k); f.op("i32.const", 8); f.op("i32.const", 8)
    f.op("call", plo)
    f.op("drop")
    f.op("local.get", p2); f.op("i64.load")
    f.op("i64.const", -2); f.op("i64.ne")
    _fail_if(f, 5)

    # whole-value set on a second key
    push_key(f, k2)
    f.op("i32.const", word[0]); f.op("i32.const", word[1]); f.op("call", ss)
    push_key(f, k2); f.op("call", ps)
    f.op("i32.eqz")
    _fail_if(f, 6)

    # append channel round trip
    push_key(f, klog)
    f.op("i32.const", word[0]); f.op("i32.const", word[1]); f.op("call", ap)
    push_key(f, klog); f.op("i32.const", buf); f.op("i32.const", 32)
    f.op("call", ra)
    _expect_i32(f, 4, 7)
    f.op("i32.const", buf); f.op("i32.load")
    f.op("i32.const", word[0]); f.op("i32.load")
    f.op("i32.ne")
    _fail_if(f, 8)

    # local lock family brackets a read-back
    push_key(f, k); f.op("call", lw)
    f.op("local.get", ptr); f.op("i64.const", 7); f.op("i64.store")
    push_key(f, k); f.op("call", uw)
    push_key(f, k); f.op("call", lr)
    f.op("local.get", ptr); f.op("i64.load"); f.op("local.set", v)
    push_key(f, k); f.op("call", ur)
    f.op("local.get", v); f.op("i64.const", 7); f.op("i64.ne")
    _fail_if(f, 9)

    # global lock family acquires first try on an uncontended backend
    push_key(f, k); f.op("call", glw)
    _fail_if(f, 10)
    push_key(f, k); f.op("call", ugw)
    push_key(f, k); f.op("call", glr)
    _fail_if(f, 11)
    push_key(f, k); f.op("call", ugr)

    f.op("i32.const", 0)
    return g.build(), _imports_of(g)


def _mem_guest():
    g = GuestModule(min_pages=1, max_pages=16)
    sbrk = g.env("sbrk")
    brk = g.env("brk")
    mmap = g.env("mmap")
    munmap = g.env("munmap")
    f = g.main()
    top = f.local("i32")
    m = f.local("i32")
    f.op("i32.const", 0); f.op("call", sbrk)
    f.op("local.set", top)
    f.op("local.get", top)
    _expect_i32(f, PAGE, 1)
    f.op("i32.const", PAGE); f.op("call", sbrk)
    f.op("local.get", top); f.op("i32.ne")
    _fail_if(f, 2)
    f.op("local.get", top); f.op("i64.const", 99); f.op("i64.store")
    f.op("local.get", top); f.op("i64.load")
    f.op("i64.const", 99); f.op("i64.ne")
    _fail_if(f, 3)
    f.op("local.get", top); f.op("i32.const", 2 * PAGE); f.op("i32.add")
    f.op("call", brk)
    _fail_if(f, 4)
    f.op("local.get", top); f.op("i32.const", PAGE); f.op("i32.add")
    f.op("i64.const", 7); f.op("i64.store")
    f.op("local.get", top); f.op("i32.const", PAGE); f.op("i32.add")
    f.op("i64.load")
    f.op("i64.const", 7); f.op("i64.ne")
    _fail_if(f, 5)
    f.op("i32.const", 0); f.op("i32.const", PAGE); f.op("i32.const", 0)
    f.op("i32.const", 0); f.op("i32.const", -1); f.op("i32.const", 0)
    f.op("call", mmap)
    f.op("local.set", m)
    f.op("local.get", m)
    f.op("local.get", top); f.op("i32.const", 2 * PAGE); f.op("i32.add")
    f.op("i32.ne")
    _fail_if(f, 6)
    f.op("local.get", m); f.op("i64.const", 123); f.op("i64.store")
    f.op("local.get", m); f.op("i64.load")
    f.op("i64.const", 123); f.op("i64.ne")
    _fail_if(f, 7)
    f.op("local.get", m); f.op("i32.const", PAGE); f.op("call", munmap)
    _fail_if(f, 8)
    f.op("i32.const", 0); f.op("call", sbrk)
    f.op("local.get", m); f.op("i32.const", PAGE); f.op("i32.add")
    f.op("i32.ne")
    _fail_if(f, 9)
    f.op("i32.const", 0)
    return g.build(), _imports_of(g)


def _store_iov(f, iov, base, length):
    f.op("i32.const", iov); f.op("i32.const", base); f.op("i32.store")
    f.op("i32.const", iov + 4); f.op("i32.const", length); f.op("i32.store")


def _wasi_guest():
    g = GuestModule(min_pages=1, max_pages=4)
    popen = g.wasi("path_open")
    fdread = g.wasi("fd_read")
    fdwrite = g.wasi("fd_write")
    fdclose = g.wasi("fd_close")
    fdseek = g.wasi("fd_seek")
    fstat = g.wasi("fd_filestat_get")
    pstat = g.wasi("path_filestat_get")
    renum = g.wasi("fd_renumber")
    clock = g.wasi("clock_time_get")
    rng = g.wasi("random_get")
    p_greet = g.string("data/greeting")
    p_out = g.string("tmp/out")
    p_escape = g.string("../escape")
    p_absent = g.string("data/absent")
    word = g.string("payload")
    buf = g.scratch(64)
    buf2 = g.scratch(16)
    statb = g.scratch(64)
    iov = g.scratch(16)
    out32 = g.scratch(8)
    tbuf = g.scratch(16)
    rbuf = g.scratch(32)
    f = g.main()
    fd = f.local("i32")
    t1 = f.local("i64")

    # read a shared file end to end
    f.op("i32.const", 3); f.op("i32.const", 0)
    push_key(f, p_greet)
    f.op("i32.const", 0)
    f.op("i64.const", 1 << 1); f.op("i64.const", 0)
    f.op("i32.const", 0); f.op("i32.const", out32)
    f.op("call", popen)
    _fail_if(f, 1)
    f.op("i32.const", out32); f.op("i32.load"); f.op("local.set", fd)
    _store_iov(f, iov, buf, 64)
    f.op("local.get", fd); f.op("i32.const", iov); f.op("i32.const", 1)
    f.op("i32.const", out32); f.op("call", fdread)
    _fail_if(f, 2)
    f.op("i32.const", out32); f.op("i32.load")
    _expect_i32(f, 13, 3)
    f.op("i32.const", buf); f.op("i32.load")
    _expect_i32(f, struct.unpack("<i", b"hell")[0], 4)
    f.op("local.get", fd); f.op("i32.const", statb); f.op("call", fstat)
    _fail_if(f, 5)
    f.op("i32.const", statb + 32); f.op("i64.load")
    f.op("i64.const", 13); f.op("i64.ne")
    _fail_if(f, 6)
    f.op("local.get", fd); f.op("call", fdclose)
    _fail_if(f, 7)

    # create, write, rewind, read back, renumber, stat by path
    f.op("i32.const", 3); f.op("i32.const", 0)
    push_key(f, p_out)
    f.op("i32.const", 1)                       # create if absent
    f.op("i64.const", (1 << 1) | (1 << 6)); f.op("i64.const", 0)
    f.op("i32.const", 0); f.op("i32.const", out32)
    f.op("call", popen)
    _fail_if(f, 8)
    f.op("i32.const", out32); f.op("i32.load"); f.op("local.set", fd)
    _store_iov(f, iov, word[0], word[1])
    f.op("local.get", fd); f.op("i32.const", iov); f.op("i32.const", 1)
    f.op("i32.const", out32); f.op("call", fdwrite)
    _fail_if(f, 9)
    f.op("i32.const", out32); f.op("i32.load")
    _expect_i32(f, 7, 10)
    f.op("local.get", fd); f.op("i64.const", 0); f.op("i32.const", 0)
    f.op("i32.const", out32); f.op("call", fdseek)
    _fail_if(f, 11)
    _store_iov(f, iov, buf2, 16)
    f.op("local.get", fd); f.op("i32.const", iov); f.op("i32.const", 1)
    f.op("i32.const", out32); f.op("call", fdread)
    _fail_if(f, 12)
    f.op("i32.const", out32); f.op("i32.load")
    _expect_i32(f, 7, 13)
    f.op("i32.const", buf2); f.op("i32.load")
    _expect_i32(f, struct.unpack("<i", b"payl")[0], 14)
    f.op("local.get", fd); f.op("i32.const", 77); f.op("call", renum)
    _fail_if(f, 15)
    f.op("i32.const", 3); f.op("i32.const", 0)
    push_key(f, p_out)
    f.op("i32.const", statb); f.op("call", pstat)
    _fail_if(f, 16)
    f.op("i32.const", statb + 32); f.op("i64.load")
    f.op("i64.const", 7); f.op("i64.ne")
    _fail_if(f, 17)
    f.op("i32.const", 77); f.op("call", fdclose)
    _fail_if(f, 18)

    # confinement: escapes are refused, absence is reported
    f.op("i32.const", 3); f.op("i32.const", 0)
    push_key(f, p_escape)
    f.op("i32.const", 1)
    f.op("i64.const", 1 << 6); f.op("i64.const", 0)
    f.op("i32.const", 0); f.op("i32.const", out32)
    f.op("call", popen)
    _expect_i32(f, 76, 19)
    f.op("i32.const", 3); f.op("i32.const", 0)
    push_key(f, p_absent)
    f.op("i32.const", 0)
    f.op("i64.const", 1 << 1); f.op("i64.const", 0)
    f.op("i32.const", 0); f.op("i32.const", out32)
    f.op("call", popen)
    _expect_i32(f, 44, 20)

    # monotonic clock, entropy, stdout
    f.op("i32.const", 1); f.op("i64.const", 0); f.op("i32.const", tbuf)
    f.op("call", clock)
    _fail_if(f, 21)
    f.op("i32.const", tbuf); f.op("i64.load"); f.op("local.set", t1)
    f.op("i32.const", 1); f.op("i64.const", 0); f.op("i32.const", tbuf)
    f.op("call", clock)
    _fail_if(f, 21)
    f.op("i32.const", tbuf); f.op("i64.load")
    f.op("local.get", t1); f.op("i64.lt_u")
    _fail_if(f, 22)
    f.op("i32.const", rbuf); f.op("i32.const", 16); f.op("call", rng)
    _fail_if(f, 23)
    f.op("i32.const", rbuf + 16); f.op("i32.const", 16); f.op("call", rng)
    _fail_if(f, 23)
    f.op("i32.const", rbuf); f.op("i64.load")
    f.op("i32.const", rbuf + 16); f.op("i64.load")
    f.op("i64.eq")
    f.op("i32.const", rbuf + 8); f.op("i64.load")
    f.op("i32.const", rbuf + 24); f.op("i64.load")
    f.op("i64.eq")
    f.op("i32.and")
    _fail_if(f, 24)
    _store_iov(f, iov, word[0], word[1])
    f.op("i32.const", 1); f.op("i32.const", iov); f.op("i32.const", 1)
    f.op("i32.const", out32); f.op("call", fdwrite)
    _fail_if(f, 25)

    f.op("i32.const", 0)
    return g.build(), _imports_of(g)


def _net_guest():
    g = GuestModule(min_pages=1, max_pages=4)
    ri = g.faasm("read_call_input")
    sock = g.env("socket")
    conn = g.env("connect")
    bind = g.env("bind")
    send = g.env("send")
    recv = g.env("recv")
    ping = g.string("ping")
    addr = g.scratch(16)
    rbuf = g.scratch(16)
    f = g.main()
    s = f.local("i32")
    f.op("i32.const", addr); f.op("i32.const", 16); f.op("call", ri)
    f.op("drop")

    # only stream sockets in the inet family exist here
    f.op("i32.const", 1); f.op("i32.const", 1); f.op("i32.const", 0)
    f.op("call", sock)
    _expect_i32(f, -1, 1)
    f.op("i32.const", 2); f.op("i32.const", 1); f.op("i32.const", 0)
    f.op("call", sock)
    f.op("local.tee", s)
    f.op("i32.const", -1); f.op("i32.eq")
    _fail_if(f, 2)

    # inbound never: bind is refused unconditionally
    f.op("local.get", s); f.op("i32.const", addr); f.op("i32.const", 8)
    f.op("call", bind)
    _expect_i32(f, -1, 3)

    # outbound to the allow-listed peer round-trips
    f.op("local.get", s); f.op("i32.const", addr); f.op("i32.const", 8)
    f.op("call", conn)
    _fail_if(f, 4)
    f.op("local.get", s); f.op("i32.const", ping[0])
    f.op("i32.const", ping[1]); f.op("i32.const", 0)
    f.op("call", send)
    _expect_i32(f, 4, 5)
    f.op("local.get", s); f.op("i32.const", rbuf); f.op("i32.const", 16)
    f.op("i32.const", 0)
    f.op("call", recv)
    _expect_i32(f, 4, 6)
    f.op("i32.const", rbuf); f.op("i32.load")
    f.op("i32.const", ping[0]); f.op("i32.load")
    f.op("i32.ne")
    _fail_if(f, 7)

    # a destination off the allow list is unreachable
    f.op("i32.const", 2); f.op("i32.const", 1); f.op("i32.const", 0)
    f.op("call", sock)
    f.op("local.set", s)
    f.op("local.get", s); f.op("i32.const", addr + 8); f.op("i32.const", 8)
    f.op("call", conn)
    _expect_i32(f, -1, 8)

    f.op("i32.const", 0)
    return g.build(), _imports_of(g)


def _bucket_guest():
    g = GuestModule(min_pages=1, max_pages=4)
    ri = g.faasm("read_call_input")
    wo = g.faasm("write_call_output")
    sock = g.env("socket")
    conn = g.env("connect")
    send = g.env("send")
    clock = g.wasi("clock_time_get")
    addr = g.scratch(8)
    tbuf = g.scratch(8)
    out = g.scratch(8)
    chunk = g.scratch(2048)
    f = g.main()
    s = f.local("i32")
    got = f.local("i32")
    t0 = f.local("i64")
    total = f.local("i64")
    f.op("i32.const", addr); f.op("i32.const", 8); f.op("call", ri)
    f.op("drop")
    f.op("i32.const", 2); f.op("i32.const", 1); f.op("i32.const", 0)
    f.op("call", sock)
    f.op("local.set", s)
    f.op("local.get", s); f.op("i32.const", addr); f.op("i32.const", 8)
    f.op("call", conn)
    _fail_if(f, 1)
    f.op("i32.const", 1); f.op("i64.const", 0); f.op("i32.const", tbuf)
    f.op("call", clock)
    f.op("drop")
    f.op("i32.const", tbuf); f.op("i64.load"); f.op("local.set", t0)
    f.op("i64.const", 0); f.op("local.set", total)
    f.block()
    f.loop()
    f.op("i32.const", 1); f.op("i64.const", 0); f.op("i32.const", tbuf)
    f.op("call", clock)
    f.op("drop")
    f.op("i32.const", tbuf); f.op("i64.load")
    f.op("local.get", t0); f.op("i64.sub")
    f.op("i64.const", 250_000_000); f.op("i64.ge_u")
    f.op("br_if", 1)
    f.op("local.get", s); f.op("i32.const", chunk); f.op("i32.const", 2048)
    f.op("i32.const", 0)
    f.op("call", send)
    f.op("local.tee", got)
    f.op("i32.const", -1); f.op("i32.eq")
    _fail_if(f, 2)
    f.op("local.get", total)
    f.op("local.get", got); f.op("i64.extend_i32_u")
    f.op("i64.add")
    f.op("local.set", total)
    f.op("br", 0)
    f.end()
    f.end()
    f.op("i32.const", out); f.op("local.get", total); f.op("i64.store")
    f.op("i32.const", out); f.op("i32.const", 8); f.op("call", wo)
    f.op("i32.const", 0)
    return g.build(), _imports_of(g)


def _hostcall_oob_guest():
    g = GuestModule(min_pages=1, max_pages=4)
    ri = g.faasm("read_call_input")
    f = g.main()
    f.op("i32.const", 0x40000000); f.op("i32.const", 64); f.op("call", ri)
    f.op("drop")
    f.op("i32.const", 0)
    return g.build(), _imports_of(g)


def test_a10_every_host_call_is_conformant():
    t0 = time.perf_counter()
    covered = set()
    lines = []

    # call I/O round trip
    raw, imp = _io_guest()
    covered |= imp
    fl = attach(Faaslet(compile_guest(raw)))
    payload = bytes(range(97, 117))
    res = run(fl, payload)
    assert res.trap is None and res.return_code == 0, res
    assert res.output == payload
    lines.append("io")

    # chain fan-out / fan-in on a live node
    raw, imp = _chain_guest()
    covered |= imp
    cfg = NodeConfig(node_id="conf0", ordinal=0, http_port=0, bus_port=0,
                     workers=4, heartbeat_s=0.2)
    node = Node(cfg, handle=InprocHandle(StateBackend()))
    node.start()
    try:
        node.upload("acc", "leaf", echo())
        node.upload("acc", "tree", raw)
        rec = node.invoke("acc", "tree", b"", wait_s=20.0)
        assert rec.status == "done" and rec.return_code == 0, (
            rec.status, rec.return_code, rec.error)
        assert rec.output == b"xy"
    finally:
        node.stop()
    lines.append("chain")

    # the full state verb set against a live backend
    raw, imp = _state_guest()
    covered |= imp
    backend = StateBackend()
    fl = attach(Faaslet(compile_guest(raw)), backend=backend)
    res = run(fl)
    assert res.trap is None, res.trap
    assert res.return_code == 0, f"state verbs failed at step {res.return_code}"
    verify = InprocHandle(backend)
    assert verify.read("conf-value", 0, 16) == struct.pack(
        "<qq", _SENTINEL, -2)
    assert verify.read("conf-whole", 0, 4) == b"abcd"
    lines.append("state")

    # heap management is a deterministic bump allocator
    raw, imp = _mem_guest()
    covered |= imp
    fl = attach(Faaslet(compile_guest(raw)))
    res = run(fl)
    assert res.trap is None, res.trap
    assert res.return_code == 0, f"memory calls failed at step {res.return_code}"
    lines.append("mem")

    # files, clock, entropy — and the root is inescapable
    raw, imp = _wasi_guest()
    covered |= imp
    vfs = VirtualFS({"data/greeting": b"hello, guest!"})
    fl = attach(Faaslet(compile_guest(raw)), vfs=vfs)
    res = run(fl)
    assert res.trap is None, res.trap
    assert res.return_code == 0, f"wasi calls failed at step {res.return_code}"
    assert fl.ctx.stdout == b"payload"
    lines.append("fs")

    # sockets: family gating, bind refusal, the allow list, a round trip
    raw, imp = _net_guest()
    covered |= imp
    with _Server("echo") as (host, port):
        fl = attach(Faaslet(compile_guest(raw)),
                    net_allow=[(host, port)])
        res = run(fl, _sockaddr(host, port) + _sockaddr(host, port + 1))
        assert res.trap is None, res.trap
        assert res.return_code == 0, (
            f"socket calls failed at step {res.return_code}")
    lines.append("net")

    # outbound bytes respect the configured rate
    raw, imp = _bucket_guest()
    covered |= imp
    rate, burst = 40_000.0, 20_000.0
    with _Server("sink") as (host, port):
        fl = attach(Faaslet(compile_guest(raw)),
                    net_allow=[(host, port)], net_rate=rate, net_burst=burst)
        t_send = time.perf_counter()
        res = run(fl, _sockaddr(host, port))
        wall = time.perf_counter() - t_send
        assert res.trap is None, res.trap
        assert res.return_code == 0, res.return_code
        granted = struct.unpack("<Q", res.output)[0]
        ceiling = (burst + rate * wall) * 1.10
        assert granted <= ceiling, (granted, ceiling, wall)
        assert granted >= burst * 0.9, (granted, burst)
    lines.append("bucket")

    # a wild pointer into a host call traps instead of corrupting
    raw, imp = _hostcall_oob_guest()
    covered |= imp
    fl = attach(Faaslet(compile_guest(raw)))
    res = run(fl, b"!")
    assert res.trap is not None and res.trap.kind == "out_of_bounds"
    lines.append("wildptr")

    # nothing in the interface went unexercised
    exposed = {f"{mod}.{name}" for mod, table in NAMESPACES.items()
               for name in table}
    assert covered == exposed, exposed - covered

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print(f"\n[a10] {'+'.join(lines)}; {len(covered)}/{len(exposed)} host "
          f"calls exercised elapsed={elapsed:.2f}s")
