"""Node composition: registry, scheduler, worker pool, bus, HTTP."""

from .config import NodeConfig
from .executor import CallHandle, Executor
from .http_api import HttpApi
from .metering import Meter, billable_gb_s
from .node import CallIds, Node
from .objectstore import FunctionStore, Manifest
from .records import (DONE, FAILED, QUEUED, RUNNING, CallRecord,
                      RecordStore, record_key)

__all__ = [
    "NodeConfig", "CallHandle", "Executor", "HttpApi", "Meter",
    "billable_gb_s", "CallIds", "Node", "FunctionStore", "Manifest",
    "DONE", "FAILED", "QUEUED", "RUNNING", "CallRecord", "RecordStore",
    "record_key",
]
