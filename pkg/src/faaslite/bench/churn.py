"""Churn benchmark: many functions rotating through a bounded warm set.

Uploads ``functions`` distinct heavy-init modules to one node whose
idle TTL is deliberately small, then paces calls round-robin at
``rate`` per second.  Each function is visited every ``functions /
rate`` seconds; keep that period above ``evict_ttl_s`` or nothing ever
leaves the warm pools.  With eviction outpacing revisits, sandboxes
keep falling out of the warm set, so calls cold-start continually —
but a cold start here is a snapshot restore, not a rerun of init.  A
pre-warm pass builds every snapshot up front, so measured cold calls
pay only the restore.  The benchmark reports the latency split by how
the call actually started, plus the measured cost of the init path
itself, which is what every evicted call would pay in a runtime
without restores.
"""

from __future__ import annotations

import statistics
import time

from ..hostiface import resolver
from ..sandbox import CompiledFunction, FunctionDef
from ..sdk import heavy_init
from .cluster import LocalCluster
from .coldstart import _fresh_initialized, _timed


def run_churn(*, functions: int = 6, rate: float = 10.0,
              duration_s: float = 8.0, fill_pages: int = 64,
              evict_ttl_s: float = 0.4, seed_probes: int = 4,
              timeout_s: float = 60.0) -> dict:
    # vary the geometry slightly so every module is a distinct upload
    modules = [heavy_init(fill_pages=fill_pages, probes=seed_probes + i)
               for i in range(functions)]

    heartbeat = min(0.2, evict_ttl_s / 2)
    with LocalCluster(1, wire=False, workers=4,
                      evict_ttl_s=evict_ttl_s,
                      heartbeat_s=heartbeat) as cluster:
        node = cluster.nodes[0]
        for i, raw in enumerate(modules):
            node.upload("bench", f"churn{i}",
                        raw, memory_limit_pages=fill_pages + 64)

        # pre-warm: first call per function builds and publishes its
        # snapshot; without this the first "cold" sample would time
        # snapshot construction instead of a restore
        for i in range(functions):
            rec = node.invoke("bench", f"churn{i}", b"\x00" * 8,
                              wait_s=timeout_s)
            if rec.status != "done":
                raise RuntimeError(f"pre-warm failed: {rec.error}")
        # let the housekeeper drain the pools so measurement starts cold
        time.sleep(evict_ttl_s + 3 * heartbeat)
        for stat in node.executor.stats:
            node.executor.stats[stat] = 0

        # how much a cold start would cost without restores
        init_ms = []
        tier = node.tier
        for i in range(functions):
            cfn = CompiledFunction.compile(
                FunctionDef("bench", f"probe{i}", modules[i],
                            memory_limit_pages=fill_pages + 64), resolver)
            _, ms = _timed(lambda: _fresh_initialized(cfn, tier))
            init_ms.append(ms)

        interval = 1.0 / rate if rate > 0 else 0.0
        warm_lat, cold_lat = [], []
        deadline = time.monotonic() + duration_s
        i = 0
        while time.monotonic() < deadline:
            name = f"churn{i % functions}"
            before = node.executor.stats["cold_starts"]
            t0 = time.perf_counter()
            rec = node.invoke("bench", name, b"\x00" * 8,
                              wait_s=timeout_s)
            ms = (time.perf_counter() - t0) * 1e3
            if rec.status != "done":
                raise RuntimeError(f"churn call failed: {rec.error}")
            if node.executor.stats["cold_starts"] > before:
                cold_lat.append(ms)
            else:
                warm_lat.append(ms)
            i += 1
            wake = t0 + interval
            pause = wake - time.perf_counter()
            if pause > 0:
                time.sleep(pause)

        stats = dict(node.executor.stats)

    med_init = statistics.median(init_ms)
    med_cold = statistics.median(cold_lat) if cold_lat else 0.0
    med_warm = statistics.median(warm_lat) if warm_lat else 0.0
    return {
        "functions": functions, "rate": rate, "duration_s": duration_s,
        "fill_pages": fill_pages, "evict_ttl_s": evict_ttl_s,
        "revisit_period_s": round(functions / rate, 3) if rate else 0.0,
        "calls": i, "cold_calls": len(cold_lat), "warm_calls": len(warm_lat),
        "init_ms": round(med_init, 3),
        "cold_call_ms": round(med_cold, 3),
        "warm_call_ms": round(med_warm, 3),
        "restore_speedup": round(med_init / med_cold, 2) if med_cold else 0.0,
        "executor": stats,
    }
