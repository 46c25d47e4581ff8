"""A cluster in one process, for benchmarks and experiments.

``wire=True`` runs the real topology: a TCP state server owns the
global tier and every node talks to it through its socket client, with
forwarded calls crossing real sockets on the bus.  ``wire=False``
shares one in-process backend — same code paths minus the network, for
when the measurement should exclude TCP noise.
"""

from __future__ import annotations

from ..node import Node, NodeConfig
from ..state import InprocHandle, RemoteHandle, StateBackend, StateServer


class LocalCluster:
    def __init__(self, n_nodes: int, *, wire: bool = True,
                 state_mode: str = "two-tier", workers: int = 4,
                 capacity: int = 16, heartbeat_s: float = 0.2,
                 evict_ttl_s: float = 30.0, with_http: bool = False,
                 http_ports=None):
        self.backend = StateBackend()
        self.server = None
        if wire:
            self.server = StateServer(backend=self.backend).start()
        self.nodes: list[Node] = []
        for i in range(n_nodes):
            cfg = NodeConfig(
                node_id=f"node{i}", ordinal=i,
                http_port=(http_ports[i] if http_ports else 0),
                bus_port=0, workers=workers, capacity=capacity,
                heartbeat_s=heartbeat_s, evict_ttl_s=evict_ttl_s,
                state_mode=state_mode)
            if wire:
                handle = RemoteHandle(self.server.host, self.server.port)
            else:
                handle = InprocHandle(self.backend)
            self.nodes.append(Node(cfg, handle=handle,
                                   with_http=with_http))

    def start(self) -> "LocalCluster":
        for node in self.nodes:
            node.start()
        return self

    def stop(self) -> None:
        for node in self.nodes:
            try:
                node.stop()
            except Exception:
                pass
        if self.server is not None:
            self.server.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # conveniences used by the benches -----------------------------------

    @property
    def handle(self):
        """A host-side handle onto the global tier."""
        return self.nodes[0].handle

    def upload_everywhere(self, user: str, name: str, raw: bytes,
                          **limits) -> None:
        """Upload once; peers will fetch through the tier on demand."""
        self.nodes[0].upload(user, name, raw, **limits)

    def total_state_bytes(self) -> tuple:
        sent = sum(n.tier.bytes_sent for n in self.nodes)
        received = sum(n.tier.bytes_received for n in self.nodes)
        return sent, received
