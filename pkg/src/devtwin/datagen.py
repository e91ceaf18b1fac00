"""Probe a device with randomized configurations and compile a raw dataset."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .httpserve import DeviceUnreachable, HttpDevice
from .schema import DeviceSchema, PropertySpec

log = logging.getLogger(__name__)

TIMING_COLUMN = "processing_time_ms"
STATUS_COLUMN = "status_code"
# tokens used for out-of-domain enum values; filtered against the allowed list
_BAD_TOKENS = ("XX", "??", "none", "INVALID", "zz")
# non-boolean tokens for boolean properties; numeric so they survive encoding
_BAD_BOOLS = (-1, 2)


class DatagenError(Exception):
    pass


class EmptyBudgetError(DatagenError, ValueError):
    pass


class GenerationAborted(DatagenError):
    """Target became unreachable; ``partial`` holds what was collected."""

    def __init__(self, message: str, partial: "RawDataset"):
        super().__init__(message)
        self.partial = partial


@dataclass
class RawRecord:
    features: dict[str, Any]
    processing_time_ms: float
    status_code: int


@dataclass
class RawDataset:
    schema_name: str
    version_tag: str
    records: list[RawRecord] = field(default_factory=list)
    complete: bool = True
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def split(self, n_first: int) -> tuple["RawDataset", "RawDataset"]:
        a = RawDataset(self.schema_name, self.version_tag, self.records[:n_first], self.complete, dict(self.meta))
        b = RawDataset(self.schema_name, self.version_tag, self.records[n_first:], self.complete, dict(self.meta))
        return a, b

    def feature_names(self) -> list[str]:
        names: list[str] = []
        for r in self.records:
            for k in r.features:
                if k not in names:
                    names.append(k)
        return names

    def write_csv(self, path: str | Path, columns: list[str] | None = None):
        """Write records plus a ``.meta.json`` sidecar; nulls become empty cells."""
        path = Path(path)
        columns = columns or self.feature_names()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*columns, TIMING_COLUMN, STATUS_COLUMN])
            for r in self.records:
                w.writerow([_cell(r.features.get(c)) for c in columns]
                           + [f"{r.processing_time_ms:.3f}", r.status_code])
        meta = {"schema": self.schema_name, "version_tag": self.version_tag,
                "records": len(self.records), "complete": self.complete, **self.meta}
        meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def read_csv(cls, path: str | Path) -> "RawDataset":
        path = Path(path)
        meta = {}
        if meta_path(path).exists():
            meta = json.loads(meta_path(path).read_text())
        records = []
        with path.open(newline="") as fh:
            rows = csv.reader(fh)
            header = next(rows)
            cols = header[:-2]
            for row in rows:
                feats = {c: (v if v != "" else None) for c, v in zip(cols, row[:-2])}
                records.append(RawRecord(feats, float(row[-2] or 0.0), int(row[-1])))
        extra = {k: v for k, v in meta.items() if k not in ("schema", "version_tag", "records", "complete")}
        return cls(meta.get("schema", ""), meta.get("version_tag", ""), records,
                   meta.get("complete", True), extra)

    @classmethod
    def read_calibration_log(cls, path: str | Path, schema: DeviceSchema) -> "RawDataset":
        """Turn a twin calibration log (JSON lines) into raw training data."""
        records = []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if not isinstance(rec.get("request"), dict):
                continue
            records.append(RawRecord(dict(rec["request"]), 0.0, int(rec["device_status"])))
        return cls(schema.device_name, schema.version_tag, records, True, {"source": str(path)})

    @classmethod
    def read(cls, path: str | Path, schema: DeviceSchema | None = None) -> "RawDataset":
        path = Path(path)
        if path.suffix == ".jsonl":
            if schema is None:
                raise DatagenError("reading a calibration log needs the device schema")
            return cls.read_calibration_log(path, schema)
        return cls.read_csv(path)


def meta_path(path: Path) -> Path:
    return path.with_name(path.stem + ".meta.json")


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class GenBudget:
    max_requests: int | None = None
    max_duration_s: float | None = None
    delay_s: float = 3.0
    p_out_of_range: float = 0.3

    def __post_init__(self):
        if self.max_requests is None and self.max_duration_s is None:
            raise ValueError("set max_requests and/or max_duration_s")
        if not 0.0 <= self.p_out_of_range <= 1.0:
            raise ValueError("p_out_of_range must be in [0, 1]")
        if self.delay_s < 0:
            raise ValueError("delay_s must be >= 0")

    @property
    def is_zero(self) -> bool:
        return self.max_requests == 0 or self.max_duration_s == 0


def _sample_range(p: PropertySpec) -> tuple[float, float]:
    lo = p.min if p.min is not None else (p.max if p.max is not None else p.default) - 100
    hi = p.max if p.max is not None else lo + 200
    return lo, hi


def _out_of_range(p: PropertySpec, rng: np.random.Generator) -> Any:
    lo, hi = _sample_range(p)
    sides = [s for s, b in ((-1, p.min), (1, p.max)) if b is not None]
    if not sides:
        return _in_range(p, rng)
    side = sides[int(rng.integers(len(sides)))]
    width = hi - lo
    if p.kind == "integer":
        offset = int(rng.integers(1, 2 * max(int(width), 1) + 1))
        return int(hi + offset) if side > 0 else int(lo - offset)
    width = width if width > 0 else 1.0
    offset = 2.0 * width * (1.0 - float(rng.random()))  # (0, 2w]
    return float(hi + offset) if side > 0 else float(lo - offset)


def _in_range(p: PropertySpec, rng: np.random.Generator) -> Any:
    if p.kind == "boolean":
        return bool(rng.integers(2))
    if p.kind == "string-enum":
        return p.allowed[int(rng.integers(len(p.allowed)))]
    lo, hi = _sample_range(p)
    if p.kind == "integer":
        return int(rng.integers(math.ceil(lo), math.floor(hi) + 1))
    return float(rng.uniform(lo, hi))


def balanced_p_out(schema: DeviceSchema, valid_share: float = 0.5) -> float:
    """Per-property corruption probability leaving ``valid_share`` of bodies fully valid."""
    if not 0.0 < valid_share < 1.0:
        raise ValueError("valid_share must be in (0, 1)")
    return 1.0 - valid_share ** (1.0 / len(schema.properties))


def sample_config(schema: DeviceSchema, rng: np.random.Generator, p_out_of_range: float = 0.3) -> dict:
    """One request body; each property independently corrupted with probability p."""
    body = {}
    for p in schema.properties:
        if rng.random() >= p_out_of_range:
            body[p.name] = _in_range(p, rng)
        elif p.kind == "boolean":
            body[p.name] = _BAD_BOOLS[int(rng.integers(len(_BAD_BOOLS)))]
        elif p.kind == "string-enum":
            bad = [t for t in _BAD_TOKENS if t not in p.allowed]
            body[p.name] = bad[int(rng.integers(len(bad)))]
        else:
            body[p.name] = _out_of_range(p, rng)
    return body


def _post_with_retry(target, body: dict, attempts: int, backoff_s: float, sleep) -> Any:
    for i in range(attempts):
        try:
            return target.post(body)
        except DeviceUnreachable:
            if i == attempts - 1:
                raise
            sleep(backoff_s * 2**i)


def run_generation(endpoint, schema: DeviceSchema, budget: GenBudget, seed: int = 0, *,
                   retries: int = 3, backoff_s: float = 0.1,
                   sleep: Callable[[float], None] = time.sleep,
                   clock: Callable[[], float] = time.monotonic) -> RawDataset:
    """POST sampled bodies to ``endpoint`` until the budget runs out.

    ``endpoint`` is a write-config URL or any object with a ``post(body)``
    method returning a DeviceResponse (e.g. an in-process emulator).
    """
    if budget.is_zero:
        raise EmptyBudgetError("budget allows no requests")
    target = HttpDevice.from_url(endpoint, schema) if isinstance(endpoint, str) else endpoint
    rng = np.random.default_rng(seed)
    ds = RawDataset(schema.device_name, schema.version_tag,
                    meta={"seed": seed, "budget": {"max_requests": budget.max_requests,
                                                   "max_duration_s": budget.max_duration_s,
                                                   "delay_s": budget.delay_s,
                                                   "p_out_of_range": budget.p_out_of_range}})
    start = clock()
    while True:
        if budget.max_requests is not None and len(ds.records) >= budget.max_requests:
            break
        if budget.max_duration_s is not None and clock() - start >= budget.max_duration_s:
            break
        if ds.records and budget.delay_s > 0:
            sleep(budget.delay_s)
        body = sample_config(schema, rng, budget.p_out_of_range)
        try:
            resp = _post_with_retry(target, body, retries, backoff_s, sleep)
        except DeviceUnreachable as exc:
            ds.complete = False
            raise GenerationAborted(f"device unreachable after {retries} attempts: {exc}", ds) from exc
        ds.records.append(RawRecord(body, float(resp.processing_time_ms), int(resp.status_code)))
    log.info("collected %d records from %s", len(ds.records), schema.label)
    return ds
