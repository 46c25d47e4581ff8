"""Distributed SGD benchmark: state volume and convergence by mode.

Seeds a synthetic sparse least-squares problem into the tier, uploads
the driver/update pair, runs one driver call with the requested worker
count, and reports wall time, the state bytes the nodes exchanged with
the tier, and the loss trajectory start/end.  The interesting number is
``bytes_total`` under ``two-tier`` versus ``data-shipping``: identical
guests, identical arithmetic, different movement policy.
"""

from __future__ import annotations

import struct
import time

from ..sdk import make_regression, sgd
from .cluster import LocalCluster


def run_sgd(*, workers: int = 4, epochs: int = 4, nodes: int = 1,
            mode: str = "two-tier", n_features: int = 128,
            n_examples: int = 256, nnz: int = 8, rate: float = 0.02,
            push_interval: int = 16, seed: int = 42,
            wire: bool = False, timeout_s: float = 600.0) -> dict:
    columns, labels, _ = make_regression(n_features, n_examples, nnz,
                                         seed=seed)
    initial_loss = sgd.loss([0.0] * n_features, columns, labels)

    # On one node every worker stays co-located.  On several, cap each
    # node's capacity so the fan-out overflows the first node and the
    # scheduler shares the surplus with the other warm hosts.
    capacity = 16 if nodes == 1 else max(2, (workers + nodes - 1) // nodes)
    with LocalCluster(nodes, wire=wire, state_mode=mode,
                      workers=max(workers + 2, 4),
                      capacity=capacity) as cluster:
        geo = sgd.seed_problem(cluster.handle, columns, labels, n_features)
        cluster.upload_everywhere(
            "bench", sgd.UPDATE_NAME,
            sgd.build_update(geo["n_features"], geo["n_examples"],
                             geo["x_size"]))
        cluster.upload_everywhere("bench", "sgd-driver", sgd.build_driver())

        if nodes > 1:
            _prewarm_update(cluster, rate)

        sent0, recv0 = cluster.total_state_bytes()
        flags = sgd.PULL_WEIGHTS if nodes > 1 else 0
        t0 = time.perf_counter()
        rec = cluster.nodes[0].invoke(
            "bench", "sgd-driver",
            sgd.pack_input(workers, epochs, rate, push_interval, flags),
            wait_s=timeout_s)
        wall_s = time.perf_counter() - t0
        if rec.status != "done" or rec.return_code != 0:
            raise RuntimeError(
                f"sgd driver did not finish cleanly: {rec.status} "
                f"rc={rec.return_code} {rec.error}")
        sent1, recv1 = cluster.total_state_bytes()

        raw = cluster.handle.read(sgd.WEIGHTS_KEY, 0, n_features * 8)
        weights = list(struct.unpack(f"<{n_features}d", raw))

    final_loss = sgd.loss(weights, columns, labels)
    return {
        "mode": mode, "workers": workers, "epochs": epochs, "nodes": nodes,
        "n_features": n_features, "n_examples": n_examples, "nnz": nnz,
        "rate": rate, "push_interval": push_interval,
        "wall_s": round(wall_s, 4),
        "bytes_sent": sent1 - sent0, "bytes_received": recv1 - recv0,
        "bytes_total": (sent1 - sent0) + (recv1 - recv0),
        "initial_loss": initial_loss, "final_loss": final_loss,
        "loss_ratio": final_loss / initial_loss if initial_loss else 0.0,
    }


def _prewarm_update(cluster: LocalCluster, rate: float) -> None:
    """Run an empty-range update once on every node.

    Registers each node in the update function's warm set, so the
    scheduler has somewhere to share overflow, and each call starts
    from a restored sandbox instead of paying init mid-benchmark.
    """
    # worker 0 of an enormous worker count: its column slice is empty,
    # so the call maps state and returns without touching a weight
    idle = sgd.pack_input(0, 1 << 30, rate, 1 << 30)
    for node in cluster.nodes:
        rec = node.new_record("bench", sgd.UPDATE_NAME)
        handle = node.executor.submit(rec, idle)
        node.executor.run_until(lambda: handle.done, 60.0)
        if rec.status != "done" or rec.return_code != 0:
            raise RuntimeError(f"pre-warm on {node.node_id} failed: "
                               f"{rec.status} rc={rec.return_code} "
                               f"{rec.error}")


def compare_modes(**kwargs) -> dict:
    """The headline comparison: same workload, both movement modes."""
    two_tier = run_sgd(mode="two-tier", **kwargs)
    shipping = run_sgd(mode="data-shipping", **kwargs)
    return {
        "two_tier": two_tier,
        "data_shipping": shipping,
        "traffic_fraction": (two_tier["bytes_total"] /
                             shipping["bytes_total"]
                             if shipping["bytes_total"] else 0.0),
    }
