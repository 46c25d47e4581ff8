"""Command line: talk to nodes over HTTP, run clusters, run benchmarks.

Exit codes: 0 success, 1 a call or benchmark failed, 2 bad usage (also
what argparse itself uses).
"""

from __future__ import annotations

import argparse
import base64
import csv
import json
import signal
import sys
import urllib.error
import urllib.request

DEFAULT_URL = "http://127.0.0.1:8090"


def _http(method: str, url: str, body: bytes | None = None,
          timeout: float = 120.0) -> dict:
    req = urllib.request.Request(url, data=body, method=method)
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        try:
            doc = json.loads(exc.read())
        except Exception:
            doc = {"error": str(exc)}
        doc["_http_status"] = exc.code
        return doc
    except (urllib.error.URLError, OSError) as exc:
        raise SystemExit(f"cannot reach {url}: {exc}")


def _read_input(spec: str | None) -> bytes:
    if spec is None:
        return b""
    if spec == "-":
        return sys.stdin.buffer.read()
    with open(spec, "rb") as fh:
        return fh.read()


def _print_record(doc: dict) -> None:
    out = dict(doc)
    raw = base64.b64decode(out.get("output", "") or "")
    try:
        printable = raw.decode("utf-8")
    except UnicodeDecodeError:
        printable = raw.hex()
    out["output"] = printable
    print(json.dumps(out, indent=2, sort_keys=True))


def _write_csv(path: str, rows: list) -> None:
    flat = []
    for row in rows:
        flat.append({k: v for k, v in row.items()
                     if not isinstance(v, (dict, list))})
    fields = sorted({k for row in flat for k in row})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(flat)
    print(f"wrote {path}")


# --- verbs -----------------------------------------------------------------

def cmd_upload(args) -> int:
    raw = _read_input(args.module)
    qs = []
    if args.memory_limit_pages:
        qs.append(f"memory_limit_pages={args.memory_limit_pages}")
    if args.fuel:
        qs.append(f"fuel={args.fuel}")
    if args.deadline_s:
        qs.append(f"deadline_s={args.deadline_s}")
    url = (f"{args.url}/f/upload/{args.user}/{args.name}"
           + ("?" + "&".join(qs) if qs else ""))
    doc = _http("POST", url, raw)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0 if "digest" in doc else 1


def cmd_invoke(args) -> int:
    payload = _read_input(args.input)
    mode = "1" if getattr(args, "async") else "0"
    doc = _http("POST",
                f"{args.url}/f/invoke/{args.user}/{args.name}?async={mode}",
                payload)
    _print_record(doc)
    if getattr(args, "async"):
        return 0 if doc.get("call_id") else 1
    return 0 if doc.get("status") == "done" else 1


def cmd_status(args) -> int:
    doc = _http("GET", f"{args.url}/f/status/{args.call_id}")
    _print_record(doc)
    return 0 if doc.get("status") else 1


def cmd_cluster_up(args) -> int:
    from .bench.cluster import LocalCluster
    from .state import StateServer

    ports = [args.http_base + i for i in range(args.nodes)]
    cluster = LocalCluster(args.nodes, wire=True, state_mode=args.mode,
                           workers=args.workers, with_http=True,
                           http_ports=ports)
    cluster.start()
    print(f"state tier on {cluster.server.host}:{cluster.server.port}")
    for node in cluster.nodes:
        print(f"{node.node_id}: http http://{node.http.address} "
              f"bus {node.bus.address}")
    print("running; interrupt to stop")
    stop = []
    signal.signal(signal.SIGINT, lambda *a: stop.append(1))
    signal.signal(signal.SIGTERM, lambda *a: stop.append(1))
    try:
        while not stop:
            signal.pause()
    finally:
        cluster.stop()
    print("stopped")
    return 0


def cmd_bench_sgd(args) -> int:
    from .bench import compare_modes, run_sgd

    kwargs = dict(workers=args.workers, epochs=args.epochs,
                  nodes=args.nodes, n_features=args.features,
                  n_examples=args.examples, push_interval=args.push_interval)
    try:
        if args.mode == "both":
            result = compare_modes(**kwargs)
            rows = [result["two_tier"], result["data_shipping"]]
            print(json.dumps(result, indent=2, sort_keys=True))
            ok = (result["two_tier"]["loss_ratio"] <= 0.5
                  and result["traffic_fraction"] <= 0.5)
        else:
            row = run_sgd(mode=args.mode, **kwargs)
            rows = [row]
            print(json.dumps(row, indent=2, sort_keys=True))
            ok = row["loss_ratio"] <= 0.5
    except RuntimeError as exc:
        print(f"bench failed: {exc}", file=sys.stderr)
        return 1
    if args.csv:
        _write_csv(args.csv, rows)
    return 0 if ok else 1


def cmd_bench_churn(args) -> int:
    from .bench import run_churn

    try:
        row = run_churn(functions=args.functions, rate=args.rate,
                        duration_s=args.duration,
                        fill_pages=args.fill_pages,
                        evict_ttl_s=args.evict_ttl)
    except RuntimeError as exc:
        print(f"bench failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(row, indent=2, sort_keys=True))
    if args.csv:
        _write_csv(args.csv, [row])
    return 0 if (not row["cold_calls"] or row["restore_speedup"] >= 3.0) \
        else 1


def cmd_bench_coldstart(args) -> int:
    from .bench import run_coldstart

    row = run_coldstart(pages=args.pages, repeats=args.repeats,
                        equivalence_inputs=args.inputs)
    print(json.dumps(row, indent=2, sort_keys=True))
    if args.csv:
        _write_csv(args.csv, [row])
    return 0 if row["mismatches"] == 0 and row["speedup"] >= 10.0 else 1


# --- wiring ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="faaslite",
        description="stateful serverless runtime: client, cluster, benches")
    sub = p.add_subparsers(dest="verb", required=True)

    up = sub.add_parser("upload", help="upload a module to a node")
    up.add_argument("user")
    up.add_argument("name")
    up.add_argument("module", help="module file, or - for stdin")
    up.add_argument("--url", default=DEFAULT_URL)
    up.add_argument("--memory-limit-pages", type=int, default=0)
    up.add_argument("--fuel", type=int, default=0)
    up.add_argument("--deadline-s", type=float, default=0.0)
    up.set_defaults(fn=cmd_upload)

    inv = sub.add_parser("invoke", help="invoke a function")
    inv.add_argument("user")
    inv.add_argument("name")
    inv.add_argument("--input", help="payload file, or - for stdin")
    inv.add_argument("--async", action="store_true",
                     help="queue and return the call id immediately")
    inv.add_argument("--url", default=DEFAULT_URL)
    inv.set_defaults(fn=cmd_invoke)

    st = sub.add_parser("status", help="poll a call record")
    st.add_argument("call_id", type=int)
    st.add_argument("--url", default=DEFAULT_URL)
    st.set_defaults(fn=cmd_status)

    cl = sub.add_parser("cluster", help="cluster operations")
    clsub = cl.add_subparsers(dest="cluster_verb", required=True)
    clup = clsub.add_parser("up", help="run a local cluster until killed")
    clup.add_argument("--nodes", type=int, default=2)
    clup.add_argument("--http-base", type=int, default=8090)
    clup.add_argument("--workers", type=int, default=4)
    clup.add_argument("--mode", default="two-tier",
                      choices=["two-tier", "data-shipping"])
    clup.set_defaults(fn=cmd_cluster_up)

    be = sub.add_parser("bench", help="benchmarks")
    besub = be.add_subparsers(dest="bench_verb", required=True)

    bs = besub.add_parser("sgd", help="distributed SGD traffic/convergence")
    bs.add_argument("--workers", type=int, default=4)
    bs.add_argument("--epochs", type=int, default=4)
    bs.add_argument("--nodes", type=int, default=1)
    bs.add_argument("--mode", default="both",
                    choices=["two-tier", "data-shipping", "both"])
    bs.add_argument("--features", type=int, default=128)
    bs.add_argument("--examples", type=int, default=256)
    bs.add_argument("--push-interval", type=int, default=16)
    bs.add_argument("--csv")
    bs.set_defaults(fn=cmd_bench_sgd)

    bc = besub.add_parser("churn", help="warm-set churn behaviour")
    bc.add_argument("--functions", type=int, default=6)
    bc.add_argument("--rate", type=float, default=10.0)
    bc.add_argument("--duration", type=float, default=8.0)
    bc.add_argument("--fill-pages", type=int, default=64)
    bc.add_argument("--evict-ttl", type=float, default=1.0)
    bc.add_argument("--csv")
    bc.set_defaults(fn=cmd_bench_churn)

    bk = besub.add_parser("coldstart", help="init path vs snapshot restore")
    bk.add_argument("--pages", type=int, default=512)
    bk.add_argument("--repeats", type=int, default=5)
    bk.add_argument("--inputs", type=int, default=100)
    bk.add_argument("--csv")
    bk.set_defaults(fn=cmd_bench_coldstart)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
