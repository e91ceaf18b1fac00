"""Deterministic raw -> processed transform with a persisted manifest.

Steps, in order: strip special characters, encode (booleans 0/1, enums to
lexicographic codes, numerics to float), nulls to 0, clamp numerics to the
schema bounds, drop low/high variance features, map status codes to class
indices. The manifest captures everything needed to replay the transform
on a single request at serving time.

Clamping folds every out-of-range value onto a bound, where it looks like
a legal extreme setting. To keep that information, each property also gets
a 0/1 out-of-domain flag column (``<name>:invalid``), computed before
clamping. The flags go through variance selection like any other column.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .datagen import TIMING_COLUMN, RawDataset
from .schema import DeviceSchema

MANIFEST_VERSION = 1
SPECIAL_CHARS = "%*_"
_STRIP_TABLE = str.maketrans("", "", SPECIAL_CHARS)


class DataPrepError(ValueError):
    pass


class NoFeaturesError(DataPrepError):
    pass


class UnparseableFeatureError(DataPrepError):
    pass


class DegenerateLabelsError(DataPrepError):
    pass


@dataclass
class PrepOptions:
    low_threshold: float = 1e-9
    high_threshold: float | None = None
    include_timing: bool = False
    domain_flags: bool = True


FLAG_SUFFIX = ":invalid"


def flag_name(prop: str) -> str:
    return prop + FLAG_SUFFIX


@dataclass
class TransformManifest:
    """The fitted transform. Column kinds: integer, real, boolean, enum, flag, timing."""
    feature_order: list[str]
    feature_kinds: dict[str, str]
    dropped_features: dict[str, str]
    enum_codes: dict[str, dict[str, int]]
    clamp_bounds: dict[str, tuple[float | None, float | None]]
    label_map: dict[int, int]
    flag_sources: dict[str, str] = field(default_factory=dict)
    property_kinds: dict[str, str] = field(default_factory=dict)
    schema: str = ""
    version: int = MANIFEST_VERSION

    @property
    def label_unmap(self) -> dict[int, int]:
        return {v: k for k, v in self.label_map.items()}

    @property
    def status_codes(self) -> list[int]:
        return sorted(self.label_map, key=self.label_map.__getitem__)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "schema": self.schema,
            "feature_order": list(self.feature_order),
            "feature_kinds": dict(self.feature_kinds),
            "dropped_features": dict(self.dropped_features),
            "property_kinds": dict(self.property_kinds),
            "enum_codes": {k: dict(v) for k, v in self.enum_codes.items()},
            "clamp_bounds": {k: list(v) for k, v in self.clamp_bounds.items()},
            "flag_sources": dict(self.flag_sources),
            "label_map": {str(k): v for k, v in self.label_map.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransformManifest":
        if d.get("version") != MANIFEST_VERSION:
            raise DataPrepError(f"unsupported manifest version {d.get('version')!r}")
        return cls(
            feature_order=list(d["feature_order"]),
            feature_kinds=dict(d["feature_kinds"]),
            dropped_features=dict(d["dropped_features"]),
            enum_codes={k: {t: int(c) for t, c in v.items()} for k, v in d["enum_codes"].items()},
            clamp_bounds={k: (v[0], v[1]) for k, v in d["clamp_bounds"].items()},
            label_map={int(k): int(v) for k, v in d["label_map"].items()},
            flag_sources=dict(d.get("flag_sources", {})),
            property_kinds=dict(d.get("property_kinds", {})),
            schema=d.get("schema", ""),
        )

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "TransformManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ProcessedDataset:
    X: np.ndarray
    y: np.ndarray
    manifest: TransformManifest
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.y)

    @property
    def n_classes(self) -> int:
        return len(self.manifest.label_map)

    def write_csv(self, path: str | Path, manifest_path: str | Path | None = None):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*self.manifest.feature_order, "label"])
            for row, label in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + [int(label)])
        self.manifest.save(manifest_path or default_manifest_path(path))

    @classmethod
    def read_csv(cls, path: str | Path, manifest_path: str | Path | None = None) -> "ProcessedDataset":
        path = Path(path)
        manifest = TransformManifest.load(manifest_path or default_manifest_path(path))
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        X = np.array([[float(v) for v in r[:-1]] for r in rows], dtype=np.float64).reshape(
            len(rows), len(manifest.feature_order))
        y = np.array([int(r[-1]) for r in rows], dtype=np.int64)
        return cls(X, y, manifest)


def default_manifest_path(path: Path) -> Path:
    return path.with_name(path.stem + ".manifest.json")


def _strip(v: Any) -> Any:
    return v.translate(_STRIP_TABLE).strip() if isinstance(v, str) else v


def _absent(v: Any) -> bool:
    return v is None or v == ""


def _to_float(v: Any) -> float | None:
    if isinstance(v, bool):
        return float(v)
    if isinstance(v, (int, float)):
        f = float(v)
        return None if math.isnan(f) else f
    if isinstance(v, str):
        try:
            f = float(v)
        except ValueError:
            return None
        return None if math.isnan(f) else f
    return None


def _parse_number(v: Any) -> int | float | None:
    """Parse keeping the int/float distinction (CSV cells arrive as strings)."""
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        return v
    if isinstance(v, str):
        try:
            return int(v)
        except ValueError:
            pass
        try:
            return float(v)
        except ValueError:
            return None
    return None


def _is_bool_token(v: Any) -> bool:
    return isinstance(v, bool) or (isinstance(v, str) and v.lower() in ("true", "false"))


def _enum_token(v: Any) -> str:
    return v if isinstance(v, str) else json.dumps(v)


def _encode(kind: str, value: Any, codes: Mapping[str, int] | None) -> float | None:
    """Encode one stripped raw value; None means null/unparseable."""
    if _absent(value):
        return None
    if kind == "enum":
        return float(codes.get(_enum_token(value), len(codes)))
    if kind == "boolean" and _is_bool_token(value):
        return 1.0 if value is True or (isinstance(value, str) and value.lower() == "true") else 0.0
    return _to_float(value)


def _out_of_domain(kind: str, value: Any, bounds, codes) -> float:
    """1.0 when a present value would fail the property's constraint."""
    if _absent(value):
        return 0.0
    if kind == "boolean":
        return 0.0 if _is_bool_token(value) else 1.0
    if kind == "enum":
        return 0.0 if _enum_token(value) in codes else 1.0
    num = _parse_number(value)
    if num is None or (isinstance(num, float) and not math.isfinite(num)):
        return 1.0
    if kind == "integer" and not isinstance(num, int):
        return 1.0
    lo, hi = bounds if bounds is not None else (None, None)
    if (lo is not None and num < lo) or (hi is not None and num > hi):
        return 1.0
    return 0.0


def _encode_value(kind: str, bounds, codes, raw: Any) -> float:
    v = _encode(kind, _strip(raw), codes)
    if v is None:
        return 0.0
    if bounds is not None:
        lo, hi = bounds
        if hi is not None and v > hi:
            v = float(hi)
        if lo is not None and v < lo:
            v = float(lo)
    return v


def _column(manifest: TransformManifest, name: str, features: Mapping[str, Any], timing: float | None) -> float:
    kind = manifest.feature_kinds[name]
    if kind == "timing":
        return 0.0 if timing is None else float(timing)
    if kind == "flag":
        src = manifest.flag_sources[name]
        return _out_of_domain(manifest.property_kinds[src], _strip(features.get(src)),
                              manifest.clamp_bounds.get(src), manifest.enum_codes.get(src))
    return _encode_value(kind, manifest.clamp_bounds.get(name), manifest.enum_codes.get(name), features.get(name))


_KIND_TAGS = {"integer": "integer", "real": "real", "boolean": "boolean", "string-enum": "enum"}


def fit_transform(raw: RawDataset, schema: DeviceSchema, options: PrepOptions | None = None) -> ProcessedDataset:
    """Fit the transform on ``raw`` and return the processed dataset (manifest attached)."""
    options = options or PrepOptions()
    if not raw.records:
        raise DataPrepError("raw dataset is empty")
    prop_kinds = {p.name: _KIND_TAGS[p.kind] for p in schema.properties}
    codes, bounds = {}, {}
    for p in schema.properties:
        if p.kind == "string-enum":
            tokens = sorted({_strip(t) for t in p.allowed})
            codes[p.name] = {t: i for i, t in enumerate(tokens)}
        elif p.is_numeric:
            bounds[p.name] = (p.min, p.max)

    kinds: dict[str, str] = {}
    flags: dict[str, str] = {}
    for p in schema.properties:
        kinds[p.name] = prop_kinds[p.name]
        if options.domain_flags:
            kinds[flag_name(p.name)] = "flag"
            flags[flag_name(p.name)] = p.name
    if options.include_timing:
        kinds[TIMING_COLUMN] = "timing"
    names = list(kinds)
    probe = TransformManifest(names, kinds, {}, codes, bounds, {}, flags, prop_kinds)

    for p in schema.properties:
        if p.kind == "string-enum":
            continue  # every token has a code, unknown ones included
        present = [_strip(r.features.get(p.name)) for r in raw.records]
        present = [v for v in present if not _absent(v)]
        if present and all(_encode(prop_kinds[p.name], v, None) is None for v in present):
            raise UnparseableFeatureError(f"feature {p.name!r} has no parseable values")
    columns = {n: np.array([_column(probe, n, r.features, r.processing_time_ms) for r in raw.records],
                           dtype=np.float64) for n in names}

    kept, dropped = [], {}
    for n in names:
        var = float(np.var(columns[n]))
        if var < options.low_threshold:
            dropped[n] = "low-variance"
        elif options.high_threshold is not None and var > options.high_threshold:
            dropped[n] = "high-variance"
        else:
            kept.append(n)
    if not kept:
        raise NoFeaturesError("no feature survived variance selection")

    statuses = sorted({int(r.status_code) for r in raw.records})
    if len(statuses) < 2:
        raise DegenerateLabelsError(f"need at least 2 distinct status codes, got {statuses}")
    label_map = {c: i for i, c in enumerate(statuses)}

    manifest = TransformManifest(
        feature_order=kept,
        feature_kinds={n: kinds[n] for n in kept},
        dropped_features=dropped,
        enum_codes=codes,
        clamp_bounds=bounds,
        label_map=label_map,
        flag_sources={n: flags[n] for n in kept if n in flags},
        property_kinds=prop_kinds,
        schema=f"{raw.schema_name}-{raw.version_tag}",
    )
    X = np.column_stack([columns[n] for n in kept])
    y = np.array([label_map[int(r.status_code)] for r in raw.records], dtype=np.int64)
    return ProcessedDataset(X, y, manifest, {"source_records": len(raw.records)})


def apply_transform(manifest: TransformManifest, record: Mapping[str, Any],
                    processing_time_ms: float | None = None) -> np.ndarray:
    """Replay the fitted transform on one raw feature map."""
    return np.array([_column(manifest, n, record, processing_time_ms) for n in manifest.feature_order],
                    dtype=np.float64)


def transform_dataset(manifest: TransformManifest, raw: RawDataset) -> ProcessedDataset:
    """Apply an existing manifest to new raw data (e.g. a held-out split).

    Rows whose status code is unknown to the manifest get label -1.
    """
    X = np.array([apply_transform(manifest, r.features, r.processing_time_ms) for r in raw.records],
                 dtype=np.float64).reshape(len(raw.records), len(manifest.feature_order))
    y = np.array([manifest.label_map.get(int(r.status_code), -1) for r in raw.records], dtype=np.int64)
    return ProcessedDataset(X, y, manifest)
