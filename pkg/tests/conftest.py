import json

import numpy as np
import pytest

from devtwin.datagen import GenBudget, balanced_p_out, run_generation
from devtwin.dataprep import fit_transform, transform_dataset
from devtwin.metalearn import TaskConfig, TrainConfig, train_maml
from devtwin.refdev import ReferenceDevice, ReferenceDeviceSpec
from devtwin.schema import bundled_schema, schema_from_dict

# acceptance criterion -> (passed, detail); printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def small_schema_doc(**overrides):
    doc = {
        "device_name": "widget",
        "version_tag": "v1",
        "sn_prefix": "W-",
        "properties": [
            {"name": "volume", "kind": "integer", "min": 0, "max": 10, "default": 5},
            {"name": "language", "kind": "string-enum", "allowed": ["EN", "NO", "DE"], "default": "EN"},
            {"name": "alarm", "kind": "boolean", "default": True},
            {"name": "level", "kind": "real", "min": 0.0, "max": 1.0, "default": 0.5},
        ],
        "endpoints": [
            {"path": "/devices/{sn}/config", "method": "GET", "role": "read-config"},
            {"path": "/devices/{sn}/config", "method": "POST", "role": "write-config"},
        ],
    }
    doc.update(overrides)
    return doc


@pytest.fixture(scope="session")
def widget():
    return schema_from_dict(small_schema_doc())


def make_dataset(schema, n, seed=0, fault_rate=0.05, p_out=None):
    dev = ReferenceDevice(ReferenceDeviceSpec(schema, f"{schema.sn_prefix}00000", fault_rate=fault_rate, seed=seed))
    p = balanced_p_out(schema) if p_out is None else p_out
    raw = run_generation(dev, schema, GenBudget(max_requests=n, delay_s=0.0, p_out_of_range=p), seed=seed)
    for r in raw.records:  # measured times are wall-clock noise
        r.processing_time_ms = 0.0
    return raw


@pytest.fixture(scope="session")
def quick_twin_model():
    """A small, quickly trained pillbox-v1 model for twin and fleet tests."""
    schema = bundled_schema("pillbox", "v1")
    raw = make_dataset(schema, 1200, seed=3)
    processed = fit_transform(raw, schema)
    model, _ = train_maml(processed, TaskConfig(n_ways=processed.n_classes, task_size=128),
                          TrainConfig(max_iterations=1500, patience=200, hidden_dim=32, seed=3))
    return schema, model.freeze(), processed.manifest


@pytest.fixture
def artifact_path(tmp_path, quick_twin_model):
    from devtwin.metalearn import save_model
    schema, model, manifest = quick_twin_model
    path = tmp_path / "model.json"
    save_model(path, model, manifest, {"note": "test"})
    return path


def holdout_f1(model, manifest, raw):
    from devtwin.evalstats import macro_metrics
    held = transform_dataset(manifest, raw)
    keep = held.y >= 0
    return macro_metrics(held.y[keep].tolist(), model.predict(held.X[keep]).tolist()).macro_f1


def dump(obj):
    return json.dumps(obj, sort_keys=True)


def rng(seed=0):
    return np.random.default_rng(seed)
