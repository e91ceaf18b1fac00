"""Many twins behind one HTTP listener, activated in waves, with live stats."""
from __future__ import annotations

import json
import logging
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any
from urllib.parse import urlencode

import numpy as np

from .httpserve import ADMIN_RESET, DeviceHost
from .refdev import DeviceResponse, error_body
from .schema import SN_PLACEHOLDER, DeviceSchema, load_schema
from .twin import CalibrationMode, DuplicateSerialError, TwinError, TwinInstance, build_twin, load_artifact

log = logging.getLogger(__name__)

STATS_PATH = "/fleet/stats"


class FleetLaunchError(RuntimeError):
    def __init__(self, message: str, serial_number: str | None = None):
        super().__init__(message)
        self.serial_number = serial_number


@dataclass
class FleetEntry:
    serial_number: str
    artifact: str
    schema: str
    calibration: CalibrationMode = field(default_factory=CalibrationMode)


@dataclass
class FleetConfig:
    entries: list[FleetEntry]
    port: int = 0
    batch_size: int = 100
    data_dir: str | None = None
    host: str = "127.0.0.1"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        seen = set()
        for e in self.entries:
            if e.serial_number in seen:
                raise DuplicateSerialError(f"duplicate serial number {e.serial_number!r}")
            seen.add(e.serial_number)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path | None = None) -> "FleetConfig":
        base = Path(base_dir) if base_dir is not None else Path(".")

        def resolve(p):
            return str(p if Path(p).is_absolute() else base / p)

        defaults = doc.get("defaults", {})
        entries = []
        for e in doc.get("entries", []):
            e = {**defaults, **e}
            cal = e.get("calibration") or {}
            entries.append(FleetEntry(e["serial_number"], resolve(e["artifact"]), resolve(e["schema"]),
                                      CalibrationMode(cal.get("mode", "off"), cal.get("device_endpoint"))))
        data_dir = doc.get("data_dir")
        return cls(entries, int(doc.get("port", 0)), int(doc.get("batch_size", 100)),
                   resolve(data_dir) if data_dir else None, doc.get("host", "127.0.0.1"))

    @classmethod
    def load(cls, path: str | Path) -> "FleetConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    @classmethod
    def uniform(cls, artifact: str | Path, schema: str | Path, serial_numbers: list[str], **kw) -> "FleetConfig":
        """Every twin cloned from one artifact."""
        return cls([FleetEntry(sn, str(artifact), str(schema)) for sn in serial_numbers], **kw)


@dataclass
class FleetStats:
    active_twins: int
    requests: dict[str, int]
    errors: dict[str, int]
    routing_errors: int
    internal_errors: int
    p50_ms: float | None
    p95_ms: float | None

    @property
    def total_requests(self) -> int:
        return sum(self.requests.values())

    def to_dict(self) -> dict:
        return {"active_twins": self.active_twins, "total_requests": self.total_requests,
                "requests": self.requests, "errors": self.errors, "routing_errors": self.routing_errors,
                "internal_errors": self.internal_errors, "p50_ms": self.p50_ms, "p95_ms": self.p95_ms}


class _Recorder:
    """Thread-safe request accounting. ``errors`` counts non-2XX responses per twin."""

    def __init__(self, window: int = 100_000):
        self._lock = threading.Lock()
        self.requests: dict[str, int] = defaultdict(int)
        self.errors: dict[str, int] = defaultdict(int)
        self.routing_errors = 0
        self.latencies: deque[float] = deque(maxlen=window)

    def __call__(self, sn: str | None, status: int, ms: float):
        with self._lock:
            self.latencies.append(ms)
            if sn is None:
                self.routing_errors += 1
                return
            self.requests[sn] += 1
            if status // 100 != 2:
                self.errors[sn] += 1

    def snapshot(self):
        with self._lock:
            lat = np.array(self.latencies) if self.latencies else None
            return dict(self.requests), dict(self.errors), self.routing_errors, lat


class Fleet:
    """Handle over a running fleet; also usable as a context manager."""

    def __init__(self, cfg: FleetConfig, host: DeviceHost):
        self.cfg = cfg
        self.host = host
        self.twins: dict[str, TwinInstance] = {}
        self.waves: list[int] = []
        self._recorder = _Recorder()
        host.on_response = self._recorder
        host.extra_routes[("GET", STATS_PATH)] = lambda: self.stats().to_dict()

    @property
    def url(self) -> str:
        return self.host.url

    def endpoint(self, sn: str, role: str = "write-config") -> str:
        return self.url + self.twins[sn].schema.endpoint(role).url_path(sn)

    def route_request(self, sn: str, method: str = "GET", body: Any = None,
                      selector: str | None = None) -> DeviceResponse:
        """Dispatch in-process exactly as the HTTP layer would."""
        twin = self.twins.get(sn)
        if twin is None:
            self._recorder(None, 404, 0.0)
            return DeviceResponse(404, error_body(404))
        role = "read-config" if method == "GET" else "write-config"
        try:
            path = twin.schema.endpoint(role).url_path(sn)
        except KeyError:
            return DeviceResponse(405, error_body(405))
        query = urlencode({"property": selector}) if selector is not None else ""
        _, resp = self.host.handle(method, path, query, body if body is not None else b"")
        self._recorder(sn, resp.status_code, resp.processing_time_ms)
        return resp

    def reset(self, sn: str) -> DeviceResponse:
        return self.host.handle("POST", ADMIN_RESET.replace(SN_PLACEHOLDER, sn))[1]

    def stats(self) -> FleetStats:
        req, err, routing, lat = self._recorder.snapshot()
        p50 = p95 = None
        if lat is not None:
            p50, p95 = (float(v) for v in np.percentile(lat, [50, 95]))
        return FleetStats(len(self.twins), req, err, routing, self.host.internal_errors, p50, p95)

    def stop(self, drain_timeout_s: float = 5.0):
        self.host.stop(drain_timeout_s)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def launch_fleet(cfg: FleetConfig, serve: bool = True) -> Fleet:
    """Build and mount every twin, ``cfg.batch_size`` at a time.

    All twins are routable when this returns. With ``serve=False`` the
    listener is bound but not started (in-process routing only).
    """
    try:
        host = DeviceHost(cfg.host, cfg.port)
    except OSError as exc:
        raise FleetLaunchError(f"cannot bind {cfg.host}:{cfg.port}: {exc}") from exc
    fleet = Fleet(cfg, host)
    schemas: dict[str, DeviceSchema] = {}
    try:
        for start in range(0, len(cfg.entries), cfg.batch_size):
            wave = cfg.entries[start:start + cfg.batch_size]
            for e in wave:
                try:
                    schema = schemas.get(e.schema)
                    if schema is None:
                        schema = schemas[e.schema] = load_schema(e.schema)
                    artifact = load_artifact(e.artifact)
                    build_twin(schema, e.serial_number, artifact, data_dir=cfg.data_dir,
                               calibration=e.calibration, registry=fleet.twins, host=host)
                except (OSError, ValueError, TwinError) as exc:
                    raise FleetLaunchError(f"twin {e.serial_number}: {exc}", e.serial_number) from exc
            fleet.waves.append(len(wave))
            log.info("fleet wave %d: %d twins active", len(fleet.waves), len(fleet.twins))
    except BaseException:
        host.stop(0)
        raise
    if serve:
        host.start()
    return fleet
