import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from devtwin.evalstats import (canonical_response, cliffs_delta, format_table, hamming_similarity,
                               macro_metrics, paired_fidelity_run, recommend_shot_method, wilcoxon_signed_rank,
                               write_report)
from devtwin.refdev import ReferenceDevice, ReferenceDeviceSpec

from oracles import brute_cliff, enum_wilcoxon, loop_hamming, naive_macro


def test_macro_examples():
    m = macro_metrics(list("AAB"), list("ABB"))
    assert (m.macro_precision, m.macro_recall) == (0.75, 0.75)
    assert m.macro_f1 == pytest.approx(2 / 3, abs=1e-4)
    assert (m.tp, m.fp, m.fn) == ({"A": 1, "B": 1}, {"A": 0, "B": 1}, {"A": 1, "B": 0})
    assert macro_metrics([1, 2, 3], [1, 2, 3]).macro_f1 == 1.0
    assert macro_metrics([1, 1], [2, 2]).macro_f1 == 0.0
    with pytest.raises(ValueError):
        macro_metrics([1], [1, 2])
    with pytest.raises(ValueError):
        macro_metrics([], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
def test_macro_vs_naive(pairs):
    t, p = map(list, zip(*pairs))
    m = macro_metrics(t, p)
    assert (m.macro_precision, m.macro_recall, m.macro_f1) == pytest.approx(naive_macro(t, p), abs=1e-15)
    for c in m.classes:
        assert 0 <= m.f1[c] <= 1
        if m.precision[c] + m.recall[c]:
            assert m.f1[c] == pytest.approx(2 * m.precision[c] * m.recall[c] / (m.precision[c] + m.recall[c]))


def test_hamming_examples():
    assert hamming_similarity("x", "x").percent == 100.0
    assert hamming_similarity("abcd", "abce").percent == 75.0
    s = hamming_similarity("ab", "abc")
    assert round(s.percent, 2) == 66.67 and (s.mismatches, s.length) == (1, 3)
    with pytest.raises(ValueError):
        hamming_similarity("", "a")


def test_canonical_response():
    a = canonical_response(200, {"b": 1.0, "a": [True, None, "x"]})
    b = canonical_response(200, {"a": [True, None, "x"], "b": 1})
    assert a == b and a.startswith("200 ")
    assert canonical_response(422, {"a": 1}, status_only=True) == "422"
    assert canonical_response(200, {"v": 0.1 + 0.2}) == canonical_response(200, {"v": 0.3})


@settings(max_examples=200, deadline=None)
@given(st.text(min_size=1, max_size=30), st.text(min_size=1, max_size=30))
def test_hamming_vs_loop(x, y):
    s = hamming_similarity(x, y)
    assert s.percent == pytest.approx(loop_hamming(x, y), abs=1e-12)
    assert s.percent == hamming_similarity(y, x).percent
    assert (s.percent == 100.0) == (x == y)


def test_wilcoxon_examples():
    assert wilcoxon_signed_rank([1, 2, 3], [1, 2, 3]).p_value == 1.0
    r = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0] * 5)
    assert (r.statistic, r.p_value, r.method) == (15.0, 0.0625, "exact")
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1], [1, 2])
    one = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0] * 5, alternative="greater")
    assert one.p_value == pytest.approx(1 / 32)


def test_exact_vs_normal_at_25(monkeypatch):
    rng = np.random.default_rng(0)
    from devtwin.evalstats import nonparam
    for _ in range(50):
        a, b = rng.normal(size=25), rng.normal(size=25)
        exact = wilcoxon_signed_rank(a, b).p_value
        with monkeypatch.context() as mp:
            mp.setattr(nonparam, "EXACT_MAX_N", 0)
            approx = wilcoxon_signed_rank(a, b)
        assert approx.method == "normal-approximation"
        assert abs(exact - approx.p_value) <= 0.02


def test_normal_path_matches_scipy():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.integers(0, 5, 60)
        b = rng.integers(0, 5, 60)
        r = wilcoxon_signed_rank(a, b)
        ref = sps.wilcoxon(a, b, zero_method="wilcox", correction=True, method="approx")
        assert r.p_value == pytest.approx(ref.pvalue, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(-4, 4), min_size=1, max_size=10))
def test_wilcoxon_vs_enumeration(d):
    r = wilcoxon_signed_rank(d, [0] * len(d))
    w, p = enum_wilcoxon(d)
    assert r.statistic == pytest.approx(w) and r.p_value == pytest.approx(p, abs=1e-12)
    assert 0 <= r.p_value <= 1


def test_cliff_examples():
    assert cliffs_delta([3, 1, 2], [1, 2, 3]) == 0
    assert cliffs_delta([1, 2, 3], [4, 5, 6]) == -1
    assert cliffs_delta([1, 3], [2, 2]) == 0
    with pytest.raises(ValueError):
        cliffs_delta([], [1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=25), st.lists(st.integers(-5, 5), min_size=1, max_size=25))
def test_cliff_properties(a, b):
    d = cliffs_delta(a, b)
    assert d == pytest.approx(brute_cliff(a, b), abs=1e-12)
    assert d == -cliffs_delta(b, a) and -1 <= d <= 1
    f = lambda v: [x ** 3 + 10 * x for x in v]  # noqa: E731 strictly increasing
    assert cliffs_delta(f(a), f(b)) == pytest.approx(d, abs=1e-12)


def test_recommendations():
    assert recommend_shot_method("low", "train", time_constrained=True) == 1
    assert recommend_shot_method("high", "train") == 5
    for f in ("low", "medium", "high"):
        assert recommend_shot_method(f, "version-adapt", upgrade="minor") == 1
    with pytest.raises(ValueError):
        recommend_shot_method("low", "train", upgrade="minor")
    with pytest.raises(ValueError):
        recommend_shot_method("low", "version-adapt")


def test_same_responder_is_perfect(widget, tmp_path):
    a = ReferenceDevice(ReferenceDeviceSpec(widget, "W-1"))
    r = paired_fidelity_run(a, a, widget, 40, seed=1)
    assert r.summary_similarity == 100.0 and r.metrics.macro_f1 == 1.0
    assert r.wilcoxon.p_value == 1.0 and r.cliffs_delta == 0.0
    b = ReferenceDevice(ReferenceDeviceSpec(widget, "W-2"))
    assert paired_fidelity_run(a, b, widget, 40, seed=1).summary_similarity == 100.0
    with pytest.raises(ValueError):
        paired_fidelity_run(a, b, widget, 0)
    paths = write_report(r, tmp_path / "rep.json")
    assert all(p.exists() for p in paths)
    assert "Sim. %" in format_table([r.summary()])


def test_partial_run_flagged(widget):
    from devtwin.httpserve import DeviceHost, HttpDevice
    a = ReferenceDevice(ReferenceDeviceSpec(widget, "W-1"))
    host = DeviceHost()
    url = host.url
    host.stop(0)
    dead = HttpDevice(url, "W-1", widget, timeout=0.5)

    class Flaky:
        calls = 0

        def post(self, body):
            self.calls += 1
            return a.post(body) if self.calls < 5 else dead.post(body)

        def reset(self):
            return a.reset()

    r = paired_fidelity_run(a, Flaky(), widget, 20)
    assert r.partial and r.n_requests == 4
