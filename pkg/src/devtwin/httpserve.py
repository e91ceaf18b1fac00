"""Threaded JSON-over-HTTP hosting for devices and twins, plus a client.

Anything with ``get(selector)``, ``post(raw)`` and ``reset()`` returning a
:class:`~devtwin.refdev.DeviceResponse` can be mounted under its serial
number. Routes come from the schema's endpoint templates; an administrative
``POST /_admin/{sn}/reset`` restores schema defaults.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Protocol
from urllib.parse import parse_qs, urlsplit

import requests

from .refdev import DeviceResponse, error_body
from .schema import SN_PLACEHOLDER, DeviceSchema

log = logging.getLogger(__name__)

ADMIN_RESET = "/_admin/{sn}/reset"
TIMING_HEADER = "X-Processing-Time-Ms"


class Responder(Protocol):
    def get(self, selector: str | None = None) -> DeviceResponse: ...
    def post(self, raw: Any) -> DeviceResponse: ...
    def reset(self) -> DeviceResponse: ...


class DeviceUnreachable(ConnectionError):
    pass


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "_Server"

    def log_message(self, fmt, *args):  # keep test output quiet
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, resp: DeviceResponse):
        payload = json.dumps(resp.body).encode()
        self.send_response(resp.status_code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.send_header(TIMING_HEADER, f"{resp.processing_time_ms:.3f}")
        self.end_headers()
        self.wfile.write(payload)

    def _dispatch(self, method: str):
        t0 = time.perf_counter()
        parts = urlsplit(self.path)
        raw = b""
        if method == "POST":
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
        host = self.server.host
        host._enter()
        try:
            extra = host.extra_routes.get((method, parts.path))
            if extra is not None:
                self._send(DeviceResponse(200, extra()))
                return
            sn, resp = host.handle(method, parts.path, parts.query, raw)
            self._send(resp)
            if host.on_response is not None:
                host.on_response(sn, resp.status_code, (time.perf_counter() - t0) * 1000.0)
        finally:
            host._leave()

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256
    host: "DeviceHost"


class DeviceHost:
    """One HTTP listener serving any number of serial-numbered targets."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.routes: dict[tuple[str, str], tuple[str, str]] = {}
        self.targets: dict[str, Responder] = {}
        self.extra_routes: dict[tuple[str, str], Callable[[], Any]] = {}
        self.on_response: Callable[[str | None, int, float], None] | None = None
        self._httpd = _Server((host, port), _Handler)
        self._httpd.host = self
        self._thread: threading.Thread | None = None
        self._lock = threading.Lock()
        self._idle = threading.Condition()
        self._inflight = 0
        self.internal_errors = 0

    def _enter(self):
        with self._idle:
            self._inflight += 1

    def _leave(self):
        with self._idle:
            self._inflight -= 1
            if self._inflight == 0:
                self._idle.notify_all()

    def handle(self, method: str, path: str, query: str = "", raw: Any = b"") -> tuple[str | None, DeviceResponse]:
        """Route one request in-process; returns the owning serial number (None if unrouted)."""
        route = self.routes.get((method, path))
        if route is None:
            return None, DeviceResponse(404, error_body(404))
        sn, role = route
        target = self.targets.get(sn)
        if target is None:  # unmounted between lookup and dispatch
            return None, DeviceResponse(404, error_body(404))
        try:
            if role == "reset":
                return sn, target.reset()
            if role == "read-config":
                q = parse_qs(query)
                return sn, target.get(q["property"][0] if "property" in q else None)
            return sn, target.post(raw)
        except Exception:
            log.exception("handler for %s failed", sn)
            with self._idle:
                self.internal_errors += 1
            return sn, DeviceResponse(500, error_body(500))

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self._httpd.server_address[0]}:{self.port}"

    def mount(self, sn: str, target: Responder, schema: DeviceSchema):
        with self._lock:
            if sn in self.targets:
                raise ValueError(f"serial number {sn!r} already mounted")
            new = {}
            for ep in schema.endpoints:
                key = (ep.method, ep.url_path(sn))
                if key in self.routes:
                    raise ValueError(f"route {key} already taken")
                new[key] = (sn, ep.role)
            new[("POST", ADMIN_RESET.replace(SN_PLACEHOLDER, sn))] = (sn, "reset")
            # publish target before routes so a matched route always resolves
            self.targets[sn] = target
            self.routes.update(new)

    def unmount(self, sn: str):
        with self._lock:
            for key in [k for k, v in self.routes.items() if v[0] == sn]:
                del self.routes[key]
            self.targets.pop(sn, None)

    def start(self) -> "DeviceHost":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def wait(self, stop_event: threading.Event):
        """Serve in the foreground until ``stop_event`` is set (e.g. by a signal handler), then drain."""
        if self._thread is None:
            self.start()
        while not stop_event.wait(0.2):
            pass
        self.stop()

    def stop(self, drain_timeout_s: float = 5.0):
        """Stop accepting connections, wait for in-flight requests, then close."""
        if self._thread is not None:
            self._httpd.shutdown()
        with self._idle:
            self._idle.wait_for(lambda: self._inflight == 0, timeout=drain_timeout_s)
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def _match_template(template: str, path: str) -> str | None:
    head, tail = template.split(SN_PLACEHOLDER)
    if path.startswith(head) and path.endswith(tail) and len(path) > len(head) + len(tail):
        return path[len(head):len(path) - len(tail)]
    return None


_sessions = threading.local()


class HttpDevice:
    """Client for one serial number on a :class:`DeviceHost` (or a real device)."""

    def __init__(self, base_url: str, sn: str, schema: DeviceSchema, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.sn = sn
        self.schema = schema
        self.timeout = timeout
        self._read = self.base_url + schema.endpoint("read-config").url_path(sn)
        self._write = self.base_url + schema.endpoint("write-config").url_path(sn)
        self._reset = self.base_url + ADMIN_RESET.replace(SN_PLACEHOLDER, sn)

    @classmethod
    def from_url(cls, url: str, schema: DeviceSchema, **kw) -> "HttpDevice":
        """Build a client from a concrete endpoint URL such as ``http://h:p/devices/SN-1/config``."""
        parts = urlsplit(url)
        for ep in schema.endpoints:
            sn = _match_template(ep.path, parts.path)
            if sn is not None:
                return cls(f"{parts.scheme}://{parts.netloc}", sn, schema, **kw)
        raise ValueError(f"{url!r} matches none of the schema endpoint templates")

    @property
    def write_url(self) -> str:
        return self._write

    @staticmethod
    def _session() -> requests.Session:
        # one pooled session per thread, shared by every client object
        s = getattr(_sessions, "session", None)
        if s is None:
            s = _sessions.session = requests.Session()
        return s

    def _call(self, method: str, url: str, **kw) -> DeviceResponse:
        t0 = time.perf_counter()
        try:
            r = self._session().request(method, url, timeout=self.timeout, **kw)
        except requests.RequestException as exc:
            raise DeviceUnreachable(f"{method} {url}: {exc}") from exc
        elapsed = (time.perf_counter() - t0) * 1000.0
        try:
            body = r.json()
        except ValueError:
            body = r.text
        timing = r.headers.get(TIMING_HEADER)
        return DeviceResponse(r.status_code, body, float(timing) if timing else elapsed)

    def get(self, selector: str | None = None) -> DeviceResponse:
        params = {"property": selector} if selector is not None else None
        return self._call("GET", self._read, params=params)

    def post(self, raw: Any) -> DeviceResponse:
        data = raw if isinstance(raw, (bytes, str)) else json.dumps(raw)
        return self._call("POST", self._write, data=data,
                          headers={"Content-Type": "application/json"})

    def reset(self) -> DeviceResponse:
        return self._call("POST", self._reset)
