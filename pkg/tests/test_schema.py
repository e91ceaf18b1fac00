import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devtwin.schema import (BoundViolationError, ConstraintError, DuplicatePropertyError, MissingFieldError,
                            SchemaSyntaxError, bundled_schema, default_config, diff_schemas, parse_schema,
                            schema_from_dict, serialize_schema, validate_config)

from conftest import small_schema_doc


def minimal(**prop):
    p = {"name": "volume", "kind": "integer", "min": 0, "max": 10, "default": 5, **prop}
    return small_schema_doc(properties=[p])


def test_minimal_document_parses():
    s = parse_schema(json.dumps(minimal()))
    assert len(s.properties) == 1
    assert s.prop("volume").max == 10


def test_inverted_bounds_name_the_property():
    with pytest.raises(BoundViolationError) as e:
        parse_schema(json.dumps(minimal(min=10, max=0)))
    assert "volume" in str(e.value) and "volume" in e.value.path


def test_enum_default_membership():
    ok = {"name": "language", "kind": "string-enum", "allowed": ["EN", "NO", "DE"], "default": "EN"}
    assert schema_from_dict(small_schema_doc(properties=[ok])).prop("language").allowed == ("EN", "NO", "DE")
    with pytest.raises(ConstraintError):
        schema_from_dict(small_schema_doc(properties=[{**ok, "default": "FR"}]))


def test_error_kinds():
    with pytest.raises(SchemaSyntaxError):
        parse_schema("{not json")
    doc = minimal()
    del doc["version_tag"]
    with pytest.raises(MissingFieldError) as e:
        schema_from_dict(doc)
    assert e.value.path == "version_tag"
    p = minimal()["properties"][0]
    with pytest.raises(DuplicatePropertyError):
        schema_from_dict(small_schema_doc(properties=[p, p]))
    with pytest.raises(ConstraintError):
        schema_from_dict(small_schema_doc(endpoints=[{"path": "/x/{sn}", "method": "GET", "role": "read-config"}]))
    with pytest.raises(ConstraintError):
        schema_from_dict(small_schema_doc(endpoints=[{"path": "/x", "method": "GET", "role": "read-config"},
                                                     {"path": "/x/{sn}", "method": "POST",
                                                      "role": "write-config"}]))


def test_diff_examples(widget):
    assert diff_schemas(widget, widget).empty
    doc = small_schema_doc()
    doc["properties"].append({"name": "extra", "kind": "boolean", "default": False})
    assert diff_schemas(widget, schema_from_dict(doc)).added == {"extra"}
    doc = small_schema_doc()
    doc["properties"][0]["max"] = 20
    assert diff_schemas(widget, schema_from_dict(doc)).changed == {"volume"}


def test_validate_examples(widget):
    assert validate_config(widget, default_config(widget)).ok
    bad = {**default_config(widget), "volume": 11}
    assert validate_config(widget, bad).violations == {"volume": "out-of-range"}
    missing = default_config(widget)
    del missing["alarm"]
    assert validate_config(widget, missing).violations == {"alarm": "missing"}


def test_bundled_schemas_load():
    for device in ("dispenser", "pillbox", "oximeter"):
        for v in ("v1", "v2", "v3", "v4"):
            s = bundled_schema(device, v)
            assert validate_config(s, default_config(s)).ok
    assert len(bundled_schema("oximeter", "v1").properties) == 2
    assert len(bundled_schema("dispenser", "v1").properties) > len(bundled_schema("pillbox", "v1").properties)


names = st.from_regex(r"[a-z][a-z0-9_]{0,8}", fullmatch=True)


@st.composite
def schema_docs(draw):
    props = []
    for name in draw(st.lists(names, min_size=1, max_size=6, unique=True)):
        kind = draw(st.sampled_from(["integer", "real", "boolean", "string-enum"]))
        if kind == "integer":
            lo = draw(st.integers(-50, 50))
            hi = draw(st.integers(lo, lo + 100))
            props.append({"name": name, "kind": kind, "min": lo, "max": hi, "default": draw(st.integers(lo, hi))})
        elif kind == "real":
            lo = draw(st.floats(-100, 100))
            hi = draw(st.floats(lo, lo + 100))
            props.append({"name": name, "kind": kind, "min": lo, "max": hi,
                          "default": draw(st.floats(lo, hi))})
        elif kind == "boolean":
            props.append({"name": name, "kind": kind, "default": draw(st.booleans())})
        else:
            allowed = draw(st.lists(st.from_regex(r"[A-Z]{1,3}", fullmatch=True), min_size=1, max_size=4,
                                    unique=True))
            props.append({"name": name, "kind": kind, "allowed": allowed,
                          "default": draw(st.sampled_from(allowed))})
    return small_schema_doc(properties=props)


@settings(max_examples=60, deadline=None)
@given(schema_docs())
def test_roundtrip_and_defaults(doc):
    s = schema_from_dict(doc)
    assert parse_schema(serialize_schema(s)) == s
    assert validate_config(s, default_config(s)).ok
    assert diff_schemas(s, s).empty


@settings(max_examples=40, deadline=None)
@given(schema_docs(), schema_docs())
def test_diff_antisymmetry(a, b):
    sa, sb = schema_from_dict(a), schema_from_dict(b)
    d, r = diff_schemas(sa, sb), diff_schemas(sb, sa)
    assert d.added == r.removed and d.removed == r.added
    assert not (d.added & d.removed) and not (d.added & d.changed) and not (d.removed & d.changed)
