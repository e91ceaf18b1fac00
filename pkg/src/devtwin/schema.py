"""Device schema format: parsing, validation, diffing and config checks.

A schema is a small JSON document describing a device's configurable
properties (typed, range-constrained), the HTTP endpoints that read and
write its configuration, and the serial-number prefix of its units.

Example::

    {
      "device_name": "pillbox",
      "version_tag": "v1",
      "sn_prefix": "PB-",
      "properties": [
        {"name": "volume", "kind": "integer", "min": 0, "max": 10, "default": 5}
      ],
      "endpoints": [
        {"path": "/devices/{sn}/config", "method": "GET", "role": "read-config"},
        {"path": "/devices/{sn}/config", "method": "POST", "role": "write-config"}
      ]
    }
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

SN_PLACEHOLDER = "{sn}"

KINDS = ("integer", "real", "boolean", "string-enum")
METHODS = ("GET", "POST")
ROLES = ("read-config", "write-config")


class SchemaError(ValueError):
    """Base class for schema problems; ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SchemaSyntaxError(SchemaError):
    pass


class MissingFieldError(SchemaError):
    pass


class BoundViolationError(SchemaError):
    pass


class DuplicatePropertyError(SchemaError):
    pass


class ConstraintError(SchemaError):
    """A field value breaks its own constraint (bad default, bad kind, ...)."""


@dataclass(frozen=True)
class PropertySpec:
    name: str
    kind: str
    default: Any
    min: float | None = None
    max: float | None = None
    allowed: tuple[str, ...] = ()
    required: bool = True

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("integer", "real")

    def check(self, value: Any) -> str | None:
        """Return a violation reason for ``value``, or None when it is valid."""
        if value is None:
            return "missing"
        if self.kind == "boolean":
            return None if isinstance(value, bool) else "type"
        if self.kind == "string-enum":
            if not isinstance(value, str):
                return "type"
            return None if value in self.allowed else "not-allowed"
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return "type"
        if self.kind == "integer" and not isinstance(value, int):
            return "type"
        if isinstance(value, float) and not math.isfinite(value):
            return "type"
        if self.min is not None and value < self.min:
            return "out-of-range"
        if self.max is not None and value > self.max:
            return "out-of-range"
        return None


@dataclass(frozen=True)
class EndpointSpec:
    path: str
    method: str
    role: str

    def url_path(self, sn: str) -> str:
        return self.path.replace(SN_PLACEHOLDER, sn)


@dataclass(frozen=True)
class DeviceSchema:
    device_name: str
    version_tag: str
    properties: tuple[PropertySpec, ...]
    endpoints: tuple[EndpointSpec, ...]
    sn_prefix: str = ""

    @property
    def property_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.properties)

    def prop(self, name: str) -> PropertySpec:
        for p in self.properties:
            if p.name == name:
                return p
        raise KeyError(name)

    def endpoint(self, role: str) -> EndpointSpec:
        for e in self.endpoints:
            if e.role == role:
                return e
        raise KeyError(role)

    @property
    def label(self) -> str:
        return f"{self.device_name}-{self.version_tag}"


@dataclass(frozen=True)
class SchemaDelta:
    added: frozenset[str] = frozenset()
    removed: frozenset[str] = frozenset()
    changed: frozenset[str] = frozenset()

    @property
    def empty(self) -> bool:
        return not (self.added or self.removed or self.changed)


@dataclass(frozen=True)
class ValidationResult:
    violations: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _require(doc: Mapping, key: str, path: str) -> Any:
    if key not in doc:
        raise MissingFieldError(f"missing required field {key!r}", f"{path}.{key}" if path else key)
    return doc[key]


def _parse_number(value: Any, path: str) -> float | int | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConstraintError("bound must be a number", path)
    return value


def _parse_property(doc: Any, path: str) -> PropertySpec:
    if not isinstance(doc, Mapping):
        raise SchemaSyntaxError("property must be an object", path)
    name = _require(doc, "name", path)
    if not isinstance(name, str) or not name.isidentifier():
        raise ConstraintError(f"property name {name!r} is not an identifier", f"{path}.name")
    ppath = f"properties.{name}"
    kind = _require(doc, "kind", ppath)
    if kind not in KINDS:
        raise ConstraintError(f"unknown kind {kind!r}", f"{ppath}.kind")
    default = _require(doc, "default", ppath)
    lo = hi = None
    allowed: tuple[str, ...] = ()
    if kind in ("integer", "real"):
        lo = _parse_number(doc.get("min"), f"{ppath}.min")
        hi = _parse_number(doc.get("max"), f"{ppath}.max")
        if lo is not None and hi is not None and lo > hi:
            raise BoundViolationError(f"min {lo} exceeds max {hi} for {name!r}", ppath)
    elif kind == "string-enum":
        raw = _require(doc, "allowed", ppath)
        if not isinstance(raw, list) or not raw or not all(isinstance(t, str) for t in raw):
            raise ConstraintError(f"allowed must be a non-empty list of strings for {name!r}",
                                  f"{ppath}.allowed")
        allowed = tuple(raw)
    required = doc.get("required", True)
    if not isinstance(required, bool):
        raise ConstraintError("required must be a boolean", f"{ppath}.required")
    spec = PropertySpec(name=name, kind=kind, default=default, min=lo, max=hi,
                        allowed=allowed, required=required)
    reason = spec.check(default)
    if reason is not None:
        raise ConstraintError(f"default {default!r} violates its constraint for {name!r} ({reason})",
                              f"{ppath}.default")
    return spec


def _parse_endpoint(doc: Any, path: str) -> EndpointSpec:
    if not isinstance(doc, Mapping):
        raise SchemaSyntaxError("endpoint must be an object", path)
    ep = EndpointSpec(path=_require(doc, "path", path), method=_require(doc, "method", path),
                      role=_require(doc, "role", path))
    if not isinstance(ep.path, str) or ep.path.count(SN_PLACEHOLDER) != 1:
        raise ConstraintError(f"path must contain exactly one {SN_PLACEHOLDER} placeholder",
                              f"{path}.path")
    if not ep.path.startswith("/"):
        raise ConstraintError("path must start with '/'", f"{path}.path")
    if ep.method not in METHODS:
        raise ConstraintError(f"method must be one of {METHODS}", f"{path}.method")
    if ep.role not in ROLES:
        raise ConstraintError(f"role must be one of {ROLES}", f"{path}.role")
    return ep


def schema_from_dict(doc: Any) -> DeviceSchema:
    if not isinstance(doc, Mapping):
        raise SchemaSyntaxError("schema document must be a JSON object")
    name = _require(doc, "device_name", "")
    version = _require(doc, "version_tag", "")
    if not isinstance(version, str) or not version:
        raise ConstraintError("version_tag must be a non-empty string", "version_tag")
    raw_props = _require(doc, "properties", "")
    if not isinstance(raw_props, list) or not raw_props:
        raise ConstraintError("at least one property is required", "properties")
    props = []
    seen = set()
    for i, p in enumerate(raw_props):
        spec = _parse_property(p, f"properties[{i}]")
        if spec.name in seen:
            raise DuplicatePropertyError(f"duplicate property name {spec.name!r}",
                                         f"properties.{spec.name}")
        seen.add(spec.name)
        props.append(spec)
    raw_eps = _require(doc, "endpoints", "")
    if not isinstance(raw_eps, list):
        raise SchemaSyntaxError("endpoints must be a list", "endpoints")
    eps = tuple(_parse_endpoint(e, f"endpoints[{i}]") for i, e in enumerate(raw_eps))
    roles = {e.role for e in eps}
    for role in ROLES:
        if role not in roles:
            raise ConstraintError(f"schema needs at least one {role} endpoint", "endpoints")
    sn_prefix = doc.get("sn_prefix", "")
    if not isinstance(sn_prefix, str):
        raise ConstraintError("sn_prefix must be a string", "sn_prefix")
    return DeviceSchema(device_name=str(name), version_tag=version, properties=tuple(props),
                        endpoints=eps, sn_prefix=sn_prefix)


def parse_schema(text: str | bytes) -> DeviceSchema:
    """Parse and validate a schema JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaSyntaxError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} col {exc.colno}") from exc
    return schema_from_dict(doc)


def load_schema(path: str | Path) -> DeviceSchema:
    return parse_schema(Path(path).read_text())


def schema_to_dict(schema: DeviceSchema) -> dict:
    props = []
    for p in schema.properties:
        d: dict[str, Any] = {"name": p.name, "kind": p.kind}
        if p.min is not None:
            d["min"] = p.min
        if p.max is not None:
            d["max"] = p.max
        if p.kind == "string-enum":
            d["allowed"] = list(p.allowed)
        d["default"] = p.default
        d["required"] = p.required
        props.append(d)
    return {
        "device_name": schema.device_name,
        "version_tag": schema.version_tag,
        "sn_prefix": schema.sn_prefix,
        "properties": props,
        "endpoints": [{"path": e.path, "method": e.method, "role": e.role} for e in schema.endpoints],
    }


def serialize_schema(schema: DeviceSchema) -> str:
    return json.dumps(schema_to_dict(schema), indent=2)


def diff_schemas(old: DeviceSchema, new: DeviceSchema) -> SchemaDelta:
    """Property-level delta between two schema versions."""
    old_props = {p.name: p for p in old.properties}
    new_props = {p.name: p for p in new.properties}
    changed = set()
    for name in old_props.keys() & new_props.keys():
        a, b = old_props[name], new_props[name]
        if (a.kind, a.min, a.max, a.allowed) != (b.kind, b.min, b.max, b.allowed):
            changed.add(name)
    return SchemaDelta(added=frozenset(new_props.keys() - old_props.keys()),
                       removed=frozenset(old_props.keys() - new_props.keys()),
                       changed=frozenset(changed))


def default_config(schema: DeviceSchema) -> dict[str, Any]:
    return {p.name: p.default for p in schema.properties}


def validate_config(schema: DeviceSchema, config: Mapping[str, Any]) -> ValidationResult:
    """Check a config against the schema. Violations are returned, not raised."""
    violations: dict[str, str] = {}
    known = set(schema.property_names)
    for key in config:
        if key not in known:
            violations[key] = "unknown-property"
    for p in schema.properties:
        if p.name not in config or config[p.name] is None:
            if p.required:
                violations[p.name] = "missing"
            continue
        reason = p.check(config[p.name])
        if reason is not None:
            violations[p.name] = reason
    return ValidationResult(violations)


def bundled_schema_path(device: str, version: str = "v1") -> Path:
    """Path of one of the example schemas shipped with the package."""
    return Path(__file__).parent / "schemas" / f"{device}-{version}.json"


def bundled_schema(device: str, version: str = "v1") -> DeviceSchema:
    return load_schema(bundled_schema_path(device, version))
