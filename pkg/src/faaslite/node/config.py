"""Node configuration: a flat key=value file, overridable from the
environment.

Precedence, lowest to highest: built-in defaults, the config file,
``FAASLITE_<KEY>`` environment variables.  Booleans accept
``1/0/true/false/yes/no``; the net allow-list is a comma-separated
``host:port`` list.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields


def _as_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _as_allow(s: str) -> tuple:
    out = []
    for part in s.split(","):
        part = part.strip()
        if not part:
            continue
        host, _, port = part.rpartition(":")
        if not host:
            raise ValueError(f"allow-list entry needs host:port: {part!r}")
        out.append((host, int(port)))
    return tuple(out)


@dataclass
class NodeConfig:
    node_id: str = "node0"
    ordinal: int = 0                 # stamped into call ids
    http_host: str = "127.0.0.1"
    http_port: int = 8090
    bus_host: str = "127.0.0.1"
    bus_port: int = 8190
    state_host: str = ""             # empty = embedded in-process store
    state_port: int = 0
    store_dir: str = ""              # empty = per-node temp directory
    workers: int = 4
    capacity: int = 16
    heartbeat_s: float = 1.0
    evict_ttl_s: float = 30.0
    chunk_size: int = 4096
    state_mode: str = "two-tier"     # or "data-shipping"
    net_allow: tuple = ()
    net_rate: float = 1 << 20        # guest egress bytes/second
    net_burst: float = 64 * 1024
    sync_timeout_s: float = 30.0
    record_ttl_s: float = 300.0
    default_memory_limit_pages: int = 1024
    default_deadline_s: float = 30.0

    @classmethod
    def load(cls, path: str | None = None,
             env: dict | None = None) -> "NodeConfig":
        values: dict = {}
        if path:
            values.update(_parse_file(path))
        environ = env if env is not None else os.environ
        for f in fields(cls):
            if f.name.startswith("_"):
                continue
            ev = environ.get(f"FAASLITE_{f.name.upper()}")
            if ev is not None:
                values[f.name] = ev
        return cls._from_strings(values)

    @classmethod
    def _from_strings(cls, values: dict) -> "NodeConfig":
        kwargs = {}
        known = {f.name: f for f in fields(cls) if not f.name.startswith("_")}
        for key, raw in values.items():
            f = known.get(key)
            if f is None:
                raise ValueError(f"unknown config key {key!r}")
            if isinstance(raw, str):
                parser = {"str": str, "int": int, "float": float,
                          "bool": _as_bool, "tuple": _as_allow}[f.type]
                kwargs[key] = parser(raw)
            else:
                kwargs[key] = raw
        return cls(**kwargs)


def _parse_file(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
