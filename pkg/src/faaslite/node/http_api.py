"""The node's HTTP face.

    POST /f/upload/<user>/<name>      body = module binary
    POST /f/invoke/<user>/<name>      body = call input, ?async=1 to queue
    GET  /f/status/<call_id>
    GET  /f/stats

Responses are JSON; call output travels base64-encoded inside it.  A
synchronous invoke that outlives the node's sync timeout comes back as
202 with whatever status the call had — the id stays pollable.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from ..errors import (FaasliteError, UnknownCallError, UnknownFunctionError,
                      ValidationError)
from .records import DONE, FAILED

_MAX_BODY = 256 * 1024 * 1024


class HttpApi:
    def __init__(self, node, host: str | None = None,
                 port: int | None = None):
        self.node = node
        host = host if host is not None else node.config.http_host
        port = port if port is not None else node.config.http_port
        handler = _make_handler(node)
        self._server = ThreadingHTTPServer((host, port), handler)
        self._server.daemon_threads = True
        self.host, self.port = self._server.server_address[:2]
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name=f"http:{self.port}",
                                        daemon=True)

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()


def _make_handler(node):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        # quiet: the default handler logs every request to stderr
        def log_message(self, fmt, *args):
            pass

        def _reply(self, code: int, doc: dict) -> None:
            body = json.dumps(doc).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _body(self) -> bytes:
            length = int(self.headers.get("Content-Length", 0))
            if length > _MAX_BODY:
                raise ValueError("body too large")
            return self.rfile.read(length) if length else b""

        def do_POST(self):
            url = urlsplit(self.path)
            parts = [p for p in url.path.split("/") if p]
            try:
                body = self._body()
            except ValueError as exc:
                self._reply(413, {"error": str(exc)})
                return
            if len(parts) == 4 and parts[:2] == ["f", "upload"]:
                self._upload(parts[2], parts[3], body, url)
            elif len(parts) == 4 and parts[:2] == ["f", "invoke"]:
                self._invoke(parts[2], parts[3], body, url)
            else:
                self._reply(404, {"error": "no such route"})

        def do_GET(self):
            url = urlsplit(self.path)
            parts = [p for p in url.path.split("/") if p]
            if len(parts) == 3 and parts[:2] == ["f", "status"]:
                self._status(parts[2])
            elif parts == ["f", "stats"]:
                self._reply(200, node.stats())
            else:
                self._reply(404, {"error": "no such route"})

        def _upload(self, user, name, body, url):
            q = parse_qs(url.query)
            limits = {}
            if "memory_limit_pages" in q:
                limits["memory_limit_pages"] = int(q["memory_limit_pages"][0])
            if "fuel" in q:
                limits["fuel"] = int(q["fuel"][0])
            if "deadline_s" in q:
                limits["deadline_s"] = float(q["deadline_s"][0])
            try:
                man = node.upload(user, name, body, **limits)
            except ValidationError as exc:
                self._reply(400, {"error": str(exc)})
                return
            except FaasliteError as exc:
                self._reply(500, {"error": str(exc)})
                return
            self._reply(200, {"user": user, "name": name,
                              "digest": man.digest, "version": man.version,
                              "size": man.size})

        def _invoke(self, user, name, body, url):
            q = parse_qs(url.query)
            is_async = q.get("async", ["0"])[0] not in ("0", "", "false")
            try:
                if is_async:
                    rec = node.invoke(user, name, body, wait_s=None)
                    self._reply(202, rec.as_dict())
                    return
                rec = node.invoke(user, name, body,
                                  wait_s=node.config.sync_timeout_s)
            except UnknownFunctionError as exc:
                self._reply(404, {"error": str(exc)})
                return
            except FaasliteError as exc:
                self._reply(500, {"error": str(exc)})
                return
            if rec.status == DONE:
                self._reply(200, rec.as_dict())
            elif rec.status == FAILED:
                self._reply(500, rec.as_dict())
            else:
                self._reply(202, rec.as_dict())

        def _status(self, raw_id):
            try:
                call_id = int(raw_id)
            except ValueError:
                self._reply(400, {"error": f"bad call id {raw_id!r}"})
                return
            try:
                rec = node.status(call_id)
            except UnknownCallError as exc:
                self._reply(404, {"error": str(exc)})
                return
            self._reply(200, rec.as_dict())

    return Handler
