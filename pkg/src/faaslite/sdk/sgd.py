"""Distributed stochastic gradient descent for sparse least squares.

Two guests cooperate through three state keys — a dense f64 weights
vector, a sparse column matrix of examples, and a dense f64 labels
vector (layouts from :mod:`.ddo`, geometry burned in at build time):

* the driver chains one update call per worker per epoch and awaits
  them;
* each update walks its contiguous slice of example columns, computes
  the residual against the weights it sees through the mapped region,
  applies ``w[row] += value * rate * 2 * residual`` per active feature
  (marking each write), and pushes the dirty weight chunks every
  ``push_interval`` examples and once at the end.

Workers sharing a node update one buffer in place, so their writes are
visible to each other immediately and pushes coalesce; workers on other
nodes see them at push/pull boundaries.  That is the usual asynchronous
SGD contract: per-example updates are not transactional, and for one
worker the run is fully deterministic — :func:`reference_run` replays
it arithmetic-op-for-arithmetic-op on the host, and the results must
match bit for bit.

Input packing for both guests: ``<IIdII`` (two u32, the f64 learning
rate, u32 push interval, u32 flags).  Flag bit 0 makes an update worker
re-pull the weights vector before its pass (wanted whenever a previous
epoch may have run on another node).
"""

from __future__ import annotations

import struct

from .ddo import encode_f64_vector, encode_sparse_columns, entries_base
from .emit import GuestModule, push_key

INPUT = struct.Struct("<IIdII")

PULL_WEIGHTS = 1

WEIGHTS_KEY = "sgd/weights"
INPUTS_KEY = "sgd/inputs"
LABELS_KEY = "sgd/labels"
UPDATE_NAME = "sgd-update"


def pack_input(a: int, b: int, rate: float, push_interval: int,
               flags: int = 0) -> bytes:
    """For the driver: (workers, epochs, ...); for an update call:
    (worker index, workers, ...)."""
    return INPUT.pack(a, b, rate, push_interval, flags)


def partition(worker: int, workers: int, n_examples: int) -> tuple:
    return (worker * n_examples // workers,
            (worker + 1) * n_examples // workers)


def build_update(n_features: int, n_examples: int, x_size: int, *,
                 weights_key: str = WEIGHTS_KEY,
                 inputs_key: str = INPUTS_KEY,
                 labels_key: str = LABELS_KEY) -> bytes:
    ebase = entries_base(n_examples)
    g = GuestModule(min_pages=1, max_pages=None)
    ri = g.faasm("read_call_input")
    gs = g.faasm("get_state")
    sso = g.faasm("set_state_offset")
    push = g.faasm("push_state")
    pull = g.faasm("pull_state")
    wk_ = g.string(weights_key)
    xk = g.string(inputs_key)
    yk = g.string(labels_key)

    f = g.main()
    wk = f.local("i32"); nw = f.local("i32")
    interval = f.local("i32"); flags = f.local("i32")
    wptr = f.local("i32"); xptr = f.local("i32"); yptr = f.local("i32")
    c = f.local("i32"); c1 = f.local("i32")
    off = f.local("i32"); cnt = f.local("i32")
    i = f.local("i32"); eptr = f.local("i32"); row = f.local("i32")
    since = f.local("i32")
    rate = f.local("f64"); acc = f.local("f64")
    err = f.local("f64"); val = f.local("f64")

    f.op("i32.const", 0); f.op("i32.const", INPUT.size); f.op("call", ri)
    f.op("drop")
    f.op("i32.const", 0); f.op("i32.load"); f.op("local.set", wk)
    f.op("i32.const", 4); f.op("i32.load"); f.op("local.set", nw)
    f.op("i32.const", 8); f.op("f64.load"); f.op("local.set", rate)
    f.op("i32.const", 16); f.op("i32.load"); f.op("local.set", interval)
    f.op("i32.const", 20); f.op("i32.load"); f.op("local.set", flags)

    push_key(f, wk_); f.op("i32.const", n_features * 8); f.op("call", gs)
    f.op("local.set", wptr)
    push_key(f, xk); f.op("i32.const", x_size); f.op("call", gs)
    f.op("local.set", xptr)
    push_key(f, yk); f.op("i32.const", n_examples * 8); f.op("call", gs)
    f.op("local.set", yptr)

    f.op("local.get", flags); f.op("i32.const", PULL_WEIGHTS)
    f.op("i32.and")
    f.if_()
    push_key(f, wk_); f.op("i32.const", n_features * 8)
    f.op("call", pull); f.op("drop")
    f.end()

    # this worker's slice of the columns
    f.op("local.get", wk); f.op("i32.const", n_examples); f.op("i32.mul")
    f.op("local.get", nw); f.op("i32.div_u"); f.op("local.set", c)
    f.op("local.get", wk); f.op("i32.const", 1); f.op("i32.add")
    f.op("i32.const", n_examples); f.op("i32.mul")
    f.op("local.get", nw); f.op("i32.div_u"); f.op("local.set", c1)

    f.block()                       # column loop
    f.loop()
    f.op("local.get", c); f.op("local.get", c1)
    f.op("i32.ge_u"); f.op("br_if", 1)

    f.op("local.get", xptr); f.op("local.get", c); f.op("i32.const", 3)
    f.op("i32.shl"); f.op("i32.add")
    f.op("i32.load", 4); f.op("local.set", off)
    f.op("local.get", xptr); f.op("local.get", c); f.op("i32.const", 3)
    f.op("i32.shl"); f.op("i32.add")
    f.op("i32.load", 8); f.op("local.set", cnt)

    # acc = w . x_c
    f.op("f64.const", 0.0); f.op("local.set", acc)
    f.op("i32.const", 0); f.op("local.set", i)
    f.block()
    f.loop()
    f.op("local.get", i); f.op("local.get", cnt)
    f.op("i32.ge_u"); f.op("br_if", 1)
    f.op("local.get", xptr); f.op("i32.const", ebase + 0)
    f.op("local.get", off); f.op("i32.add"); f.op("i32.add")
    f.op("local.get", i); f.op("i32.const", 12); f.op("i32.mul")
    f.op("i32.add"); f.op("local.set", eptr)
    f.op("local.get", eptr); f.op("i32.load"); f.op("local.set", row)
    f.op("local.get", eptr); f.op("f64.load", 4); f.op("local.set", val)
    f.op("local.get", acc)
    f.op("local.get", wptr); f.op("local.get", row); f.op("i32.const", 3)
    f.op("i32.shl"); f.op("i32.add"); f.op("f64.load")
    f.op("local.get", val); f.op("f64.mul")
    f.op("f64.add"); f.op("local.set", acc)
    f.op("local.get", i); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", i)
    f.op("br", 0)
    f.end()
    f.end()

    # err = y_c - acc
    f.op("local.get", yptr); f.op("local.get", c); f.op("i32.const", 3)
    f.op("i32.shl"); f.op("i32.add"); f.op("f64.load")
    f.op("local.get", acc); f.op("f64.sub"); f.op("local.set", err)

    # w[row] += ((val * rate) * 2) * err, marking each slot
    f.op("i32.const", 0); f.op("local.set", i)
    f.block()
    f.loop()
    f.op("local.get", i); f.op("local.get", cnt)
    f.op("i32.ge_u"); f.op("br_if", 1)
    f.op("local.get", xptr); f.op("i32.const", ebase + 0)
    f.op("local.get", off); f.op("i32.add"); f.op("i32.add")
    f.op("local.get", i); f.op("i32.const", 12); f.op("i32.mul")
    f.op("i32.add"); f.op("local.set", eptr)
    f.op("local.get", eptr); f.op("i32.load"); f.op("local.set", row)
    f.op("local.get", eptr); f.op("f64.load", 4); f.op("local.set", val)
    # address of w[row]
    f.op("local.get", wptr); f.op("local.get", row); f.op("i32.const", 3)
    f.op("i32.shl"); f.op("i32.add")
    # new value
    f.op("local.get", wptr); f.op("local.get", row); f.op("i32.const", 3)
    f.op("i32.shl"); f.op("i32.add"); f.op("f64.load")
    f.op("local.get", val); f.op("local.get", rate); f.op("f64.mul")
    f.op("f64.const", 2.0); f.op("f64.mul")
    f.op("local.get", err); f.op("f64.mul")
    f.op("f64.add")
    f.op("f64.store")
    # mark the 8 bytes we just wrote
    push_key(f, wk_)
    f.op("local.get", row); f.op("i32.const", 3); f.op("i32.shl")
    f.op("local.get", wptr); f.op("local.get", row); f.op("i32.const", 3)
    f.op("i32.shl"); f.op("i32.add")
    f.op("i32.const", 8)
    f.op("call", sso)
    f.op("local.get", i); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", i)
    f.op("br", 0)
    f.end()
    f.end()

    f.op("local.get", since); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", since)
    f.op("local.get", since); f.op("local.get", interval)
    f.op("i32.ge_u")
    f.if_()
    push_key(f, wk_); f.op("call", push); f.op("drop")
    f.op("i32.const", 0); f.op("local.set", since)
    f.end()

    f.op("local.get", c); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", c)
    f.op("br", 0)
    f.end()
    f.end()

    push_key(f, wk_); f.op("call", push); f.op("drop")
    f.op("i32.const", 0)
    return g.build()


def build_driver(update_name: str = UPDATE_NAME) -> bytes:
    """Chains one update per worker per epoch; input ``<IIdII`` =
    (workers, epochs, rate, push_interval, flags)."""
    g = GuestModule(min_pages=1, max_pages=4)
    ri = g.faasm("read_call_input")
    ch = g.faasm("chain_call")
    aw = g.faasm("await_call")
    name = g.string(update_name)
    child_in = g.scratch(INPUT.size)
    ids = g.scratch(4 * 256)        # room for 256 workers

    f = g.main()
    nw = f.local("i32"); epochs = f.local("i32")
    interval = f.local("i32"); flags = f.local("i32")
    e = f.local("i32"); k = f.local("i32")
    rate = f.local("f64")

    f.op("i32.const", 0); f.op("i32.const", INPUT.size); f.op("call", ri)
    f.op("drop")
    f.op("i32.const", 0); f.op("i32.load"); f.op("local.set", nw)
    f.op("i32.const", 4); f.op("i32.load"); f.op("local.set", epochs)
    f.op("i32.const", 8); f.op("f64.load"); f.op("local.set", rate)
    f.op("i32.const", 16); f.op("i32.load"); f.op("local.set", interval)
    f.op("i32.const", 20); f.op("i32.load"); f.op("local.set", flags)

    f.op("i32.const", 0); f.op("local.set", e)
    f.block()                       # epoch loop
    f.loop()
    f.op("local.get", e); f.op("local.get", epochs)
    f.op("i32.ge_u"); f.op("br_if", 1)

    # fan out
    f.op("i32.const", 0); f.op("local.set", k)
    f.block()
    f.loop()
    f.op("local.get", k); f.op("local.get", nw)
    f.op("i32.ge_u"); f.op("br_if", 1)
    f.op("i32.const", child_in); f.op("local.get", k); f.op("i32.store")
    f.op("i32.const", child_in + 4); f.op("local.get", nw)
    f.op("i32.store")
    f.op("i32.const", child_in + 8); f.op("local.get", rate)
    f.op("f64.store")
    f.op("i32.const", child_in + 16); f.op("local.get", interval)
    f.op("i32.store")
    f.op("i32.const", child_in + 20); f.op("local.get", flags)
    f.op("i32.store")
    # ids[k] = chain(update, child_in)
    f.op("i32.const", ids)
    f.op("local.get", k); f.op("i32.const", 2); f.op("i32.shl")
    f.op("i32.add")
    push_key(f, name)
    f.op("i32.const", child_in); f.op("i32.const", INPUT.size)
    f.op("call", ch)
    f.op("i32.store")
    f.op("local.get", k); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", k)
    f.op("br", 0)
    f.end()
    f.end()

    # fan in; any nonzero child fails the epoch
    f.op("i32.const", 0); f.op("local.set", k)
    f.block()
    f.loop()
    f.op("local.get", k); f.op("local.get", nw)
    f.op("i32.ge_u"); f.op("br_if", 1)
    f.op("i32.const", ids)
    f.op("local.get", k); f.op("i32.const", 2); f.op("i32.shl")
    f.op("i32.add"); f.op("i32.load")
    f.op("call", aw)
    f.if_(("i32",))
    f.op("i32.const", 1)
    f.else_()
    f.op("i32.const", 0)
    f.end()
    f.if_()
    f.op("i32.const", 1); f.op("return")
    f.end()
    f.op("local.get", k); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", k)
    f.op("br", 0)
    f.end()
    f.end()

    f.op("local.get", e); f.op("i32.const", 1); f.op("i32.add")
    f.op("local.set", e)
    f.op("br", 0)
    f.end()
    f.end()
    f.op("i32.const", 0)
    return g.build()


# --- host-side reference --------------------------------------------------

def reference_update(weights, columns, labels, worker: int, workers: int,
                     rate: float) -> None:
    """Replays one update call's arithmetic in the guest's exact order,
    mutating ``weights`` in place."""
    c0, c1 = partition(worker, workers, len(columns))
    for c in range(c0, c1):
        acc = 0.0
        for row, val in columns[c]:
            acc = acc + weights[row] * val
        err = labels[c] - acc
        for row, val in columns[c]:
            weights[row] = weights[row] + ((val * rate) * 2.0) * err


def reference_run(columns, labels, n_features: int, *, workers: int = 1,
                  epochs: int = 1, rate: float = 0.01):
    """Sequential reference: workers take their slices in order within
    each epoch.  Bit-exact against the runtime only for one worker
    (parallel workers interleave nondeterministically by design)."""
    weights = [0.0] * n_features
    for _ in range(epochs):
        for k in range(workers):
            reference_update(weights, columns, labels, k, workers, rate)
    return weights


def loss(weights, columns, labels) -> float:
    total = 0.0
    for c, col in enumerate(columns):
        acc = 0.0
        for row, val in col:
            acc = acc + weights[row] * val
        err = labels[c] - acc
        total = total + err * err
    return total


def seed_problem(handle, columns, labels, n_features: int) -> dict:
    """Write the dataset and zeroed weights into the global tier.
    Returns the sizes the guests need burned in at build time."""
    x_blob = encode_sparse_columns(columns)
    handle.write_whole(WEIGHTS_KEY, bytes(8 * n_features))
    handle.write_whole(INPUTS_KEY, x_blob)
    handle.write_whole(LABELS_KEY, encode_f64_vector(labels))
    return {"n_features": n_features, "n_examples": len(columns),
            "x_size": len(x_blob)}
