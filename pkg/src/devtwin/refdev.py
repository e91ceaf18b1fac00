"""Rule-based reference device: the ground-truth stand-in for a physical unit.

The emulator validates every write against its schema, keeps a JSON config
as state, and can inject server faults and artificial latency. Status-code
policy: 400 malformed body, 422 constraint violation, 500 injected fault,
200 success, 404 unknown property selector.
"""
from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from http import HTTPStatus
from typing import Any

import numpy as np

from .schema import DeviceSchema, default_config, validate_config

FAULT_MODES = ("zoned", "random")


@dataclass
class DeviceResponse:
    status_code: int
    body: Any
    processing_time_ms: float = 0.0

    @property
    def family(self) -> int:
        return self.status_code // 100

    @property
    def ok(self) -> bool:
        return self.family == 2


def error_body(status: int) -> dict:
    """Error payload shared by devices and twins; depends only on the status code."""
    try:
        return {"error": HTTPStatus(status).phrase}
    except ValueError:
        return {"error": f"HTTP {status}"}


def parse_body(raw: Any) -> dict | None:
    """Decode a request body into a JSON object, or None if malformed."""
    if isinstance(raw, dict):
        return raw
    if isinstance(raw, (bytes, bytearray)):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError:
            return None
    if not isinstance(raw, str):
        return None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError:
        return None
    return doc if isinstance(doc, dict) else None


@dataclass
class ReferenceDeviceSpec:
    schema: DeviceSchema
    serial_number: str
    fault_rate: float = 0.0
    latency_ms: float | tuple[float, float] = 0.0
    seed: int = 0
    fault_mode: str = "zoned"

    def __post_init__(self):
        if not 0.0 <= self.fault_rate <= 1.0:
            raise ValueError(f"fault_rate must be in [0, 1], got {self.fault_rate}")
        lat = self.latency_ms if isinstance(self.latency_ms, tuple) else (self.latency_ms, self.latency_ms)
        if min(lat) < 0 or lat[0] > lat[1]:
            raise ValueError(f"invalid latency {self.latency_ms!r}")
        if self.fault_mode not in FAULT_MODES:
            raise ValueError(f"fault_mode must be one of {FAULT_MODES}")


@dataclass(frozen=True)
class FaultZone:
    """Range of one numeric property inside which valid writes fail.

    Models a firmware defect at the top end of a setting: the same request
    always gets the same answer, and a uniformly sampled valid config lands
    in the zone with probability close to ``rate``.
    """
    prop: str | None
    lo: float = 0.0
    hi: float = 0.0
    rate: float = 0.0
    seed: int = 0

    def hit(self, config: dict) -> bool:
        if self.rate <= 0.0:
            return False
        if self.prop is None:
            digest = hashlib.sha256(
                f"{self.seed}:{json.dumps(config, sort_keys=True)}".encode()).digest()
            return int.from_bytes(digest[:8], "big") / 2.0**64 < self.rate
        return self.lo <= config[self.prop] <= self.hi


def make_fault_zone(schema: DeviceSchema, rate: float, seed: int = 0) -> FaultZone:
    """Pick the fault zone for a schema.

    Preference order: the bounded integer property with the fewest values
    (at least 1/rate of them), faulting on its top round(rate*n) values;
    then the first bounded real, faulting on the top ``rate`` share of its
    range; otherwise a config hash.
    """
    if rate <= 0.0:
        return FaultZone(None, rate=0.0, seed=seed)
    bounded = [p for p in schema.properties if p.is_numeric and p.min is not None and p.max is not None
               and p.max > p.min]
    ints = [p for p in bounded if p.kind == "integer" and (p.max - p.min + 1) * rate >= 1.0 - 1e-9]
    if ints:
        p = min(ints, key=lambda q: q.max - q.min)  # stable: first in schema order on ties
        n = int(p.max - p.min + 1)
        k = max(1, int(round(rate * n)))
        return FaultZone(p.name, float(p.max - k + 1), float(p.max), k / n, seed)
    reals = [p for p in bounded if p.kind == "real"]
    if reals:
        p = reals[0]
        return FaultZone(p.name, float(p.max - rate * (p.max - p.min)), float(p.max), rate, seed)
    return FaultZone(None, rate=rate, seed=seed)


class ReferenceDevice:
    """In-process emulator; one instance per serial number.

    Request handling is serialized per instance.
    """

    def __init__(self, spec: ReferenceDeviceSpec):
        self.spec = spec
        self.schema = spec.schema
        self.serial_number = spec.serial_number
        self._state = default_config(self.schema)
        self._lock = threading.Lock()
        self._fault_rng = np.random.default_rng([spec.seed, 1])
        self._latency_rng = np.random.default_rng([spec.seed, 2])
        self.fault_zone = make_fault_zone(self.schema, spec.fault_rate, spec.seed)

    @property
    def state(self) -> dict:
        with self._lock:
            return dict(self._state)

    def _delay(self):
        lat = self.spec.latency_ms
        if isinstance(lat, tuple):
            ms = float(self._latency_rng.uniform(*lat)) if lat[1] > lat[0] else lat[0]
        else:
            ms = float(lat)
        if ms > 0:
            time.sleep(ms / 1000.0)

    def _is_fault(self, merged: dict) -> bool:
        if self.spec.fault_rate <= 0.0:
            return False
        if self.spec.fault_mode == "random":
            return bool(self._fault_rng.random() < self.spec.fault_rate)
        return self.fault_zone.hit(merged)

    def get(self, selector: str | None = None) -> DeviceResponse:
        t0 = time.perf_counter()
        with self._lock:
            self._delay()
            if selector is None:
                status, body = 200, dict(self._state)
            elif selector in self._state:
                status, body = 200, {selector: self._state[selector]}
            else:
                status, body = 404, error_body(404)
        return DeviceResponse(status, body, (time.perf_counter() - t0) * 1000.0)

    def post(self, raw: Any) -> DeviceResponse:
        t0 = time.perf_counter()
        with self._lock:
            self._delay()
            body = parse_body(raw)
            if body is None:
                status = 400
            else:
                merged = {**self._state, **body}
                if not validate_config(self.schema, merged).ok:
                    status = 422
                elif self._is_fault(merged):
                    status = 500
                else:
                    self._state = merged
                    status = 200
            out = dict(self._state) if status == 200 else error_body(status)
        return DeviceResponse(status, out, (time.perf_counter() - t0) * 1000.0)

    def reset(self, config: dict | None = None) -> DeviceResponse:
        with self._lock:
            self._state = dict(config) if config is not None else default_config(self.schema)
            return DeviceResponse(200, dict(self._state))


@dataclass
class EmulatorBank:
    """Several emulators of one device model, keyed by serial number."""
    schema: DeviceSchema
    fault_rate: float = 0.0
    latency_ms: float | tuple[float, float] = 0.0
    seed: int = 0
    fault_mode: str = "zoned"
    devices: dict[str, ReferenceDevice] = field(default_factory=dict)

    def add(self, sn: str) -> ReferenceDevice:
        dev = ReferenceDevice(ReferenceDeviceSpec(self.schema, sn, self.fault_rate, self.latency_ms,
                                                  self.seed, self.fault_mode))
        self.devices[sn] = dev
        return dev
