"""Two-tier shared state.

Local tier: page-mapped buffers with chunk-level present/dirty
tracking, shared by every sandbox on the node.  Shared tier: one
authoritative store reachable over a small framed protocol (or by
direct call when co-resident), with leased global locks.
"""

from .backend import DEFAULT_LEASE_S, StateBackend
from .client import InprocHandle, RemoteHandle
from .local import (DATA_SHIPPING, DEFAULT_CHUNK, TWO_TIER, LocalTier,
                    StateValue)
from .rwlock import RWLock
from .server import StateServer

__all__ = ["DATA_SHIPPING", "DEFAULT_CHUNK", "DEFAULT_LEASE_S",
           "InprocHandle", "LocalTier", "RWLock", "RemoteHandle",
           "StateBackend", "StateServer", "StateValue", "TWO_TIER"]
