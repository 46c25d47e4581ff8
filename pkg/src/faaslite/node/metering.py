"""Usage accounting.

Each call is billed for the memory it could actually touch: the
sandbox's peak mapped bytes (private memory plus any attached shared
regions, at the high-water mark) multiplied by wall-clock duration, in
gigabyte-seconds.  A shared region counts once per sandbox that mapped
it — the point being that co-located sandboxes over one region bill
their window into it rather than a private copy each.
"""

from __future__ import annotations

import threading
from collections import defaultdict

GIB = float(1 << 30)


def billable_gb_s(peak_bytes: int, wall_s: float) -> float:
    return (peak_bytes / GIB) * wall_s


class Meter:
    """Per-user, per-function running totals for one node."""

    def __init__(self):
        self._mu = threading.Lock()
        self._totals = defaultdict(lambda: {
            "calls": 0, "gb_s": 0.0, "wall_s": 0.0, "peak_bytes": 0,
            "state_bytes_sent": 0, "state_bytes_received": 0,
        })

    def record(self, user: str, name: str, *, peak_bytes: int,
               wall_ns: int, bytes_sent: int = 0,
               bytes_received: int = 0) -> float:
        wall_s = wall_ns / 1e9
        cost = billable_gb_s(peak_bytes, wall_s)
        with self._mu:
            row = self._totals[(user, name)]
            row["calls"] += 1
            row["gb_s"] += cost
            row["wall_s"] += wall_s
            row["peak_bytes"] = max(row["peak_bytes"], peak_bytes)
            row["state_bytes_sent"] += bytes_sent
            row["state_bytes_received"] += bytes_received
        return cost

    def snapshot(self) -> dict:
        with self._mu:
            return {f"{u}/{n}": dict(row)
                    for (u, n), row in sorted(self._totals.items())}

    def total_gb_s(self) -> float:
        with self._mu:
            return sum(row["gb_s"] for row in self._totals.values())
