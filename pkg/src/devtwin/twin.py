"""Digital twins: a shared read-only model behind a per-serial-number JSON state.

A twin answers the same GET/POST contract as the reference device. POST
bodies are merged over the current state, replayed through the training
transform and classified; a predicted 2XX commits the merged state, any
other prediction is returned as-is and leaves the state untouched.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .dataprep import TransformManifest, apply_transform
from .httpserve import DeviceHost, DeviceUnreachable, HttpDevice
from .metalearn.artifact import load_model
from .metalearn.model import MlpModel, forward
from .refdev import DeviceResponse, error_body, parse_body
from .schema import DeviceSchema, default_config

log = logging.getLogger(__name__)

MODES = ("off", "shadow", "authoritative")
# returned without inference for keys the schema does not define
STRUCTURAL_REJECT = 422


class TwinError(Exception):
    pass


class DuplicateSerialError(TwinError):
    pass


class SerialNumberError(TwinError, ValueError):
    pass


class ModelMismatchError(TwinError):
    pass


@dataclass(frozen=True)
class CalibrationMode:
    mode: str = "off"
    device_endpoint: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"calibration mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "off" and not self.device_endpoint:
            raise ValueError(f"calibration mode {self.mode!r} needs a device endpoint")


@dataclass
class CalibrationRecord:
    request: Any
    twin_status: int
    device_status: int
    device_config: dict | None
    timestamp: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


_cache_lock = threading.Lock()
_artifact_cache: dict[tuple[str, int, int], tuple[MlpModel, TransformManifest]] = {}


def load_artifact(path: str | Path) -> tuple[MlpModel, TransformManifest]:
    """Load a model artifact once per file version; the model comes back frozen."""
    p = Path(path).resolve()
    st = p.stat()
    key = (str(p), st.st_mtime_ns, st.st_size)
    with _cache_lock:
        hit = _artifact_cache.get(key)
        if hit is None:
            model, manifest, _ = load_model(p)
            hit = _artifact_cache[key] = (model.freeze(), manifest)
        return hit


def _write_json_atomic(path: Path, doc: Any):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True))
    os.replace(tmp, path)


class TwinInstance:
    """Runtime twin for one serial number. Requests are serialized per twin."""

    def __init__(self, schema: DeviceSchema, serial_number: str, model: MlpModel, manifest: TransformManifest,
                 state: dict, data_dir: str | Path | None = None,
                 calibration: CalibrationMode = CalibrationMode(), device=None):
        self.schema = schema
        self.serial_number = serial_number
        self.model = model
        self.manifest = manifest
        self.calibration = calibration
        self._names = set(schema.property_names)
        self._label_unmap = manifest.label_unmap
        self._state = dict(state)
        self._lock = threading.RLock()
        self.data_dir = Path(data_dir) if data_dir is not None else None
        if device is None and calibration.mode != "off":
            device = HttpDevice.from_url(calibration.device_endpoint, schema)
        self.device = device
        self._persist()

    # storage ---------------------------------------------------------------
    @property
    def state_path(self) -> Path | None:
        return None if self.data_dir is None else self.data_dir / f"{self.serial_number}.json"

    @property
    def calibration_log(self) -> Path | None:
        return None if self.data_dir is None else self.data_dir / f"{self.serial_number}.calibration.jsonl"

    def _persist(self):
        if self.data_dir is not None:
            _write_json_atomic(self.state_path, {"serial_number": self.serial_number,
                                                 "schema": self.schema.label, "state": self._state})

    @property
    def state(self) -> dict:
        with self._lock:
            return dict(self._state)

    # request handling ------------------------------------------------------
    def predict_status(self, config: dict) -> int:
        x = apply_transform(self.manifest, config)
        return self._label_unmap[int(np.argmax(forward(self.model, x)))]

    def get(self, selector: str | None = None) -> DeviceResponse:
        t0 = time.perf_counter()
        with self._lock:
            if selector is None:
                status, body = 200, dict(self._state)
            elif selector in self._state:
                status, body = 200, {selector: self._state[selector]}
            else:
                status, body = 404, error_body(404)
        return DeviceResponse(status, body, (time.perf_counter() - t0) * 1000.0)

    def _evaluate(self, raw: Any) -> tuple[int, dict | None]:
        """Predicted status and, for 2XX, the state it would commit."""
        body = parse_body(raw)
        if body is None:
            return 400, None
        if any(k not in self._names for k in body):
            return STRUCTURAL_REJECT, None
        merged = {**self._state, **body}
        status = self.predict_status(merged)
        return status, (merged if status // 100 == 2 else None)

    def twin_post(self, raw: Any) -> DeviceResponse:
        t0 = time.perf_counter()
        with self._lock:
            status, merged = self._evaluate(raw)
            if merged is not None:
                self._state = merged
                self._persist()
                body = dict(self._state)
            else:
                body = error_body(status)
        return DeviceResponse(status, body, (time.perf_counter() - t0) * 1000.0)

    def post(self, raw: Any) -> DeviceResponse:
        if self.calibration.mode == "off":
            return self.twin_post(raw)
        return self.calibrated_post(raw)[0]

    def calibrated_post(self, raw: Any) -> tuple[DeviceResponse, CalibrationRecord | None]:
        """POST with the physical device in the loop (see CalibrationMode)."""
        if self.calibration.mode == "off":
            return self.twin_post(raw), None
        with self._lock:
            before = dict(self._state)
            twin_status, _ = self._evaluate(raw)
            try:
                dev = self.device.post(raw)
                dev_state = dev.body if dev.ok and isinstance(dev.body, dict) else self.device.get().body
            except DeviceUnreachable as exc:
                log.warning("twin %s: device unreachable, serving twin result (%s)", self.serial_number, exc)
                return self.twin_post(raw), None
            if self.calibration.mode == "shadow":
                resp = self.twin_post(raw)
                twin_after = self._state
            else:
                resp = dev
                twin_after = before if twin_status // 100 != 2 else {**before, **(parse_body(raw) or {})}
            record = None
            if twin_status // 100 != dev.status_code // 100 or twin_after != dev_state:
                record = CalibrationRecord(raw if isinstance(raw, dict) else parse_body(raw) or str(raw),
                                           twin_status, dev.status_code, dev_state, time.time())
                self._append_record(record)
            if isinstance(dev_state, dict) and set(dev_state) <= self._names:
                if self._state != dev_state:
                    self._state = dict(dev_state)
                    self._persist()
            return resp, record

    def _append_record(self, record: CalibrationRecord):
        path = self.calibration_log
        if path is not None:
            with path.open("a") as fh:
                fh.write(record.to_json() + "\n")

    def reset(self, config: dict | None = None) -> DeviceResponse:
        with self._lock:
            self._state = dict(config) if config is not None else default_config(self.schema)
            self._persist()
            return DeviceResponse(200, dict(self._state))


def check_compatible(schema: DeviceSchema, manifest: TransformManifest):
    """Every model input must be computable from the schema's properties."""
    names = set(schema.property_names)
    missing = []
    for col in manifest.feature_order:
        kind = manifest.feature_kinds.get(col)
        src = manifest.flag_sources.get(col, col)
        if kind != "timing" and src not in names:
            missing.append(col)
    if missing:
        raise ModelMismatchError(f"model inputs {missing} have no property in schema {schema.label}")


def build_twin(schema: DeviceSchema, serial_number: str, artifact, initial_state: dict | None = None,
               data_dir: str | Path | None = None, calibration: CalibrationMode = CalibrationMode(),
               registry: dict | None = None, host: DeviceHost | None = None, device=None) -> TwinInstance:
    """Create (or resume) a twin.

    ``artifact`` is a path or a ``(model, manifest)`` pair. Without an
    explicit ``initial_state`` a persisted state file is resumed, else the
    schema defaults are used. ``registry`` (sn -> twin) enforces uniqueness;
    ``host`` mounts the twin's routes.
    """
    if schema.sn_prefix and not serial_number.startswith(schema.sn_prefix):
        raise SerialNumberError(f"serial number {serial_number!r} lacks prefix {schema.sn_prefix!r}")
    if registry is not None and serial_number in registry:
        raise DuplicateSerialError(f"duplicate serial number {serial_number!r}")
    model, manifest = load_artifact(artifact) if isinstance(artifact, (str, Path)) else artifact
    check_compatible(schema, manifest)
    if data_dir is not None:
        Path(data_dir).mkdir(parents=True, exist_ok=True)
    state = initial_state
    if state is None and data_dir is not None:
        path = Path(data_dir) / f"{serial_number}.json"
        if path.exists():
            state = json.loads(path.read_text())["state"]
    if state is None:
        state = default_config(schema)
    unknown = set(state) - set(schema.property_names)
    if unknown:
        raise TwinError(f"initial state has unknown properties {sorted(unknown)}")
    twin = TwinInstance(schema, serial_number, model, manifest, state, data_dir, calibration, device)
    if registry is not None:
        registry[serial_number] = twin
    if host is not None:
        host.mount(serial_number, twin, schema)
    return twin
