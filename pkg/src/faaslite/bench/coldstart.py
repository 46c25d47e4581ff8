"""Cold-start benchmark: full init path versus snapshot restore.

Three numbers per run, all on the same function:

* ``init_ms`` — instantiate plus a real run of the init entry, the
  price of a cold start without a snapshot;
* ``restore_ms`` — building the same ready-to-run sandbox from the
  captured image;
* ``reset_ms`` — rewinding an already-used sandbox between calls
  (the warm path), with the pages it actually dirtied counted.

The init work is a deterministic fill of ``pages`` of heap, so restored
and equivalence-checked sandboxes can be verified against the host-side
reference for any input.
"""

from __future__ import annotations

import statistics
import struct
import time

from ..hostiface import CallContext, resolver
from ..sandbox import CompiledFunction, Faaslet, FunctionDef
from ..sdk import heavy_init, heavy_init_reference
from ..snapshot import capture, reset, restore
from ..state import LocalTier


def _timed(fn):
    t0 = time.perf_counter_ns()
    out = fn()
    return out, (time.perf_counter_ns() - t0) / 1e6


def _fresh_initialized(cfn, tier):
    faaslet = Faaslet(cfn)
    ctx = CallContext(faaslet, tier, user="bench")
    result = faaslet.invoke(entry="_faasm_init")
    ctx.close()
    if result.trap is not None or result.return_code != 0:
        raise RuntimeError(f"init failed: {result.trap} "
                           f"rc={result.return_code}")
    return faaslet


def _run_main(faaslet, tier, value: int) -> int:
    ctx = CallContext(faaslet, tier, user="bench",
                      input_data=struct.pack("<Q", value))
    result = faaslet.invoke()
    ctx.close()
    if result.trap is not None:
        raise RuntimeError(f"main trapped: {result.trap.kind}")
    return struct.unpack("<Q", bytes(result.output))[0]


def run_coldstart(*, pages: int = 512, repeats: int = 5,
                  equivalence_inputs: int = 100,
                  reset_samples: int = 50) -> dict:
    raw = heavy_init(fill_pages=pages)
    fdef = FunctionDef("bench", "heavy", raw,
                       memory_limit_pages=pages + 64)
    cfn = CompiledFunction.compile(fdef, resolver)
    tier = LocalTier(None)

    # the full path, once for the snapshot and repeatedly for timing
    init_ms = []
    faaslet = None
    for _ in range(max(repeats, 1)):
        faaslet, ms = _timed(lambda: _fresh_initialized(cfn, tier))
        init_ms.append(ms)
    snap = capture(faaslet)

    restore_ms = []
    restored = None
    for _ in range(max(repeats, 1)):
        restored, ms = _timed(lambda: restore(cfn, snap))
        restore_ms.append(ms)

    # equivalence: restored sandbox vs the host-side reference
    mismatches = 0
    for value in range(equivalence_inputs):
        got = _run_main(restored, tier, value)
        want = heavy_init_reference(value, fill_pages=pages)
        if got != want:
            mismatches += 1

    # warm path: rewind between no-op-ish calls
    reset_ms = []
    pages_rewritten = []
    for value in range(reset_samples):
        _run_main(restored, tier, value)
        (n, ), ms = _timed(lambda: (reset(restored, snap),))
        reset_ms.append(ms)
        pages_rewritten.append(n)

    med_init = statistics.median(init_ms)
    med_restore = statistics.median(restore_ms)
    return {
        "pages": pages,
        "image_bytes": len(snap.memory_image),
        "init_ms": round(med_init, 3),
        "restore_ms": round(med_restore, 3),
        "speedup": round(med_init / med_restore, 2) if med_restore else 0.0,
        "reset_ms": round(statistics.median(reset_ms), 3),
        "pages_rewritten_median": int(statistics.median(pages_rewritten)),
        "equivalence_inputs": equivalence_inputs,
        "mismatches": mismatches,
    }
