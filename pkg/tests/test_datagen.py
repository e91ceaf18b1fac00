import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devtwin.datagen import (EmptyBudgetError, GenBudget, GenerationAborted, RawDataset, balanced_p_out,
                             run_generation, sample_config)
from devtwin.httpserve import DeviceHost
from devtwin.refdev import ReferenceDevice, ReferenceDeviceSpec
from devtwin.schema import bundled_schema, validate_config


def emulator(schema, **kw):
    return ReferenceDevice(ReferenceDeviceSpec(schema, f"{schema.sn_prefix}1", **kw))


def test_sampler_extremes(widget):
    rng = np.random.default_rng(0)
    for _ in range(300):
        assert validate_config(widget, sample_config(widget, rng, 0.0)).ok
        body = sample_config(widget, rng, 1.0)
        assert not 0 <= body["volume"] <= 10 if isinstance(body["volume"], (int, float)) else True
        assert set(validate_config(widget, body).violations) == set(body)


def test_sampler_determinism(widget):
    a = [sample_config(widget, np.random.default_rng(5), 0.3) for _ in range(3)]
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    assert [sample_config(widget, r1) for _ in range(50)] == [sample_config(widget, r2) for _ in range(50)]
    assert a[0] == a[1] == a[2]


def test_budget_and_status_families(widget):
    ds = run_generation(emulator(widget), widget, GenBudget(max_requests=10, delay_s=0.0))
    assert len(ds) == 10
    ok = run_generation(emulator(widget), widget, GenBudget(max_requests=100, delay_s=0, p_out_of_range=0.0))
    assert all(r.status_code // 100 == 2 for r in ok.records)
    bad = run_generation(emulator(widget), widget, GenBudget(max_requests=100, delay_s=0, p_out_of_range=1.0))
    assert not any(r.status_code // 100 == 2 for r in bad.records)
    with pytest.raises(EmptyBudgetError):
        run_generation(emulator(widget), widget, GenBudget(max_requests=0))


def test_delay_and_duration(widget):
    slept = []
    ds = run_generation(emulator(widget), widget, GenBudget(max_requests=5, delay_s=0.5), sleep=slept.append)
    assert len(ds) == 5 and slept == [0.5] * 4
    t = iter(range(1000))
    ds = run_generation(emulator(widget), widget, GenBudget(max_duration_s=3, delay_s=0),
                        clock=lambda: float(next(t)))
    assert len(ds) == 2  # clock ticks once per check


def test_unreachable_aborts_with_partial(widget):
    with DeviceHost() as host:
        d = emulator(widget)
        host.mount(d.serial_number, d, widget)
        url = host.url + widget.endpoint("write-config").url_path(d.serial_number)
    with pytest.raises(GenerationAborted) as e:
        run_generation(url, widget, GenBudget(max_requests=3, delay_s=0), retries=2, backoff_s=0,
                       sleep=lambda s: None)
    assert not e.value.partial.complete


def test_http_generation_matches_in_process(widget):
    d = emulator(widget)
    with DeviceHost() as host:
        host.mount(d.serial_number, d, widget)
        url = host.url + widget.endpoint("write-config").url_path(d.serial_number)
        via_http = run_generation(url, widget, GenBudget(max_requests=30, delay_s=0), seed=4)
    local = run_generation(emulator(widget), widget, GenBudget(max_requests=30, delay_s=0), seed=4)
    assert [r.status_code for r in via_http.records] == [r.status_code for r in local.records]
    assert [r.features for r in via_http.records] == [r.features for r in local.records]


def test_csv_roundtrip(tmp_path, widget):
    ds = run_generation(emulator(widget, fault_rate=0.1), widget, GenBudget(max_requests=50, delay_s=0,
                                                                             p_out_of_range=0.5))
    path = tmp_path / "raw.csv"
    ds.write_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert header == [p.name for p in widget.properties] + ["processing_time_ms", "status_code"]
    back = RawDataset.read_csv(path)
    assert [r.status_code for r in back.records] == [r.status_code for r in ds.records]
    assert back.meta["seed"] == 0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_class_balance(seed):
    s = bundled_schema("pillbox", "v1")
    ds = run_generation(emulator(s), s, GenBudget(max_requests=100, delay_s=0, p_out_of_range=0.3), seed=seed)
    families = {r.status_code // 100 for r in ds.records}
    assert 2 in families and 4 in families


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 20), share=st.floats(0.05, 0.95))
def test_balanced_p_out(k, share):
    from conftest import small_schema_doc
    from devtwin.schema import schema_from_dict
    props = [{"name": f"p{i}", "kind": "boolean", "default": True} for i in range(k)]
    s = schema_from_dict(small_schema_doc(properties=props))
    assert (1 - balanced_p_out(s, share)) ** k == pytest.approx(share)
