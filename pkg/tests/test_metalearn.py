import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from devtwin.dataprep import ProcessedDataset, TransformManifest
from devtwin.metalearn import (ArtifactCorruptError, Params, TaskConfig, TaskError, TrainConfig, build_meta_dataset,
                               forward, hvp, init_model, init_params, inner_adapt, load_model, loss_and_grads,
                               meta_gradient, sample_task, save_model, train_maml, transfer_weights)
from devtwin.metalearn.model import logits

from oracles import finite_difference, logistic_baseline, max_rel_error, numeric_loss


def random_case(rng, d=None, h=None, c=None, n=None):
    d = d or int(rng.integers(1, 9))
    h = h or int(rng.integers(1, 17))
    c = c or int(rng.integers(2, 5))
    n = n or int(rng.integers(1, 12))
    p = init_params(d, c, h, rng)
    p = Params(p.W1, rng.normal(size=h) * 0.3, p.W2, rng.normal(size=c) * 0.3)
    return p, rng.normal(size=(n, d)), rng.integers(0, c, n)


def manifest_for(features, codes):
    return TransformManifest(list(features), {f: "numeric" for f in features}, {}, {}, {},
                             {c: i for i, c in enumerate(codes)})


def test_meta_dataset_examples():
    m = build_meta_dataset(np.array([0, 1, 0, 1]))
    assert {k: v.tolist() for k, v in m.class_index.items()} == {0: [0, 2], 1: [1, 3]}
    with pytest.raises(TaskError):
        build_meta_dataset(np.zeros(5, dtype=int))
    y = np.array([0, 1, 2, 2, 1, 0, 2])
    m = build_meta_dataset(y)
    assert len(m.class_index) == 3 and sum(len(v) for v in m.class_index.values()) == len(y)


def test_figure_layout_task():
    # two classes, two samples of each in the adaptation split
    y = np.array([0, 0, 0, 1, 1, 1, 0, 1])
    t = sample_task(build_meta_dataset(y), TaskConfig(n_ways=2, k_shots=2, task_size=8), np.random.default_rng(0))
    assert len(t.adapt_idx) == 4 and np.bincount(t.adapt_y).tolist() == [2, 2]
    a = sample_task(build_meta_dataset(y), TaskConfig(2, 2, task_size=8), np.random.default_rng(1))
    b = sample_task(build_meta_dataset(y), TaskConfig(2, 2, task_size=8), np.random.default_rng(1))
    assert all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("adapt_idx", "eval_idx", "classes"))


def test_task_config_validation():
    with pytest.raises(ValueError):
        TaskConfig(n_ways=1)
    with pytest.raises(ValueError):
        TaskConfig(n_ways=4, k_shots=64, task_size=256)
    with pytest.raises(TaskError):
        sample_task(build_meta_dataset(np.array([0, 1, 0, 1])), TaskConfig(n_ways=3, task_size=8),
                    np.random.default_rng())


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_classes=st.integers(2, 5), k=st.integers(1, 5))
def test_task_wellformed(seed, n_classes, k):
    rng = np.random.default_rng(seed)
    y = np.concatenate([np.full(int(rng.integers(k + 1, 40)), c) for c in range(n_classes)])
    rng.shuffle(y)
    n = int(rng.integers(2, n_classes + 1))
    t = sample_task(build_meta_dataset(y), TaskConfig(n, k, task_size=n * k + int(rng.integers(1, 60))), rng)
    assert sorted(set(t.adapt_y.tolist())) == list(range(n))
    assert np.all(np.bincount(t.adapt_y, minlength=n) == k)
    assert not set(t.adapt_idx.tolist()) & set(t.eval_idx.tolist())
    assert np.all(y[t.adapt_idx] == t.classes[t.adapt_y]) and np.all(y[t.eval_idx] == t.classes[t.eval_y])


def test_init_examples():
    m = init_model(4, 3, 128, seed=5)
    assert m.params.W1.shape == (128, 4) and m.params.W2.shape == (3, 128)
    assert not m.params.b1.any() and not m.params.b2.any()
    again = init_model(4, 3, 128, seed=5)
    assert all(np.array_equal(a, b) for a, b in zip(m.params, again.params))


def test_forward_examples():
    rng = np.random.default_rng(0)
    zero = Params(np.zeros((6, 3)), np.zeros(6), np.zeros((2, 6)), np.zeros(2))
    assert np.allclose(forward(zero, rng.normal(size=3)), [0.5, 0.5])
    X = rng.normal(size=(20, 3))
    assert loss_and_grads(zero, X, rng.integers(0, 2, 20))[0] == pytest.approx(np.log(2), abs=1e-12)
    for _ in range(50):
        p, X, _ = random_case(rng)
        P = forward(p, X)
        assert np.all(np.abs(P.sum(1) - 1) <= 1e-12) and np.all((P >= 0) & (P <= 1))
        assert np.array_equal(P.argmax(1), logits(p, X).argmax(1))
        shifted = Params(p.W1, p.b1, p.W2, p.b2 + 7.5)
        assert np.array_equal(forward(shifted, X).argmax(1), P.argmax(1))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p, X, y = random_case(rng)
        loss, g = loss_and_grads(p, X, y)
        assert loss == pytest.approx(numeric_loss(p, X, y), rel=1e-12)
        assert max_rel_error(g.flat(), finite_difference(p, X, y)) <= 1e-4


def test_restricted_class_gradients():
    rng = np.random.default_rng(2)
    p, X, _ = random_case(rng, c=4)
    classes = np.array([1, 3])
    y = rng.integers(0, 2, len(X))
    _, g = loss_and_grads(p, X, y, classes)
    assert max_rel_error(g.flat(), finite_difference(p, X, y, classes=classes)) <= 1e-4


def test_duplicate_rows_invariant():
    rng = np.random.default_rng(3)
    p, X, y = random_case(rng)
    l1, g1 = loss_and_grads(p, X, y)
    l2, g2 = loss_and_grads(p, np.vstack([X, X]), np.concatenate([y, y]))
    assert l1 == pytest.approx(l2, rel=1e-12) and np.allclose(g1.flat(), g2.flat(), rtol=1e-12, atol=1e-15)


def test_hvp_matches_gradient_differences():
    rng = np.random.default_rng(4)
    p, X, y = random_case(rng, d=3, h=5, c=3, n=6)
    v = p.unflat(rng.normal(size=p.flat().size))
    eps = 1e-6
    up = loss_and_grads(p.unflat(p.flat() + eps * v.flat()), X, y)[1].flat()
    dn = loss_and_grads(p.unflat(p.flat() - eps * v.flat()), X, y)[1].flat()
    assert max_rel_error(hvp(p, X, y, v).flat(), (up - dn) / (2 * eps), floor=1e-6) <= 1e-4


def test_inner_adapt():
    rng = np.random.default_rng(5)
    p, X, y = random_case(rng, n=10)
    snapshot = [a.copy() for a in p]
    same = inner_adapt(p, X, y, inner_lr=0.0)
    assert all(np.array_equal(a, b) for a, b in zip(same, p))
    before = loss_and_grads(p, X, y)[0]
    assert any(loss_and_grads(inner_adapt(p, X, y, lr), X, y)[0] <= before for lr in (1e-1, 1e-2, 1e-3))
    assert all(np.array_equal(a, b) for a, b in zip(p, snapshot))
    with pytest.raises(ValueError):
        inner_adapt(p, X, y, 0.1, steps=0)


def test_second_order_meta_gradient():
    """Exact second-order meta-gradient vs finite differences of the post-adaptation loss."""
    rng = np.random.default_rng(6)
    p, X, y = random_case(rng, d=3, h=4, c=2, n=12)
    y = np.arange(12) % 2
    meta = build_meta_dataset(y)
    task = sample_task(meta, TaskConfig(2, 1, task_size=10), rng)
    cfg = TrainConfig(inner_lr=0.3, meta_lr=0.01, second_order=True, adaptation_steps=2, max_iterations=10,
                      patience=5)
    _, g, _ = meta_gradient(p, X, [task], cfg)

    def outer(v):
        q = inner_adapt(p.unflat(v), X[task.adapt_idx], task.adapt_y, 0.3, 2, task.classes)
        return loss_and_grads(q, X[task.eval_idx], task.eval_y, task.classes)[0]

    v, h = p.flat(), 1e-6
    fd = np.array([(outer(v + h * e) - outer(v - h * e)) / (2 * h) for e in np.eye(v.size)])
    assert max_rel_error(g.flat(), fd, floor=1e-6) <= 1e-4


def separable_dataset(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 3))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(np.int64)
    margin = np.abs(X[:, 0] + 0.5 * X[:, 1]) > 0.05
    X, y = X[margin], y[margin]
    return ProcessedDataset(X, y, manifest_for(["a", "b", "c"], [200, 422]))


@pytest.mark.slow
def test_separable_training_reaches_perfect_f1():
    from devtwin.evalstats import macro_metrics
    train = separable_dataset(2000, 0)
    held = separable_dataset(1000, 1)
    base = logistic_baseline(train.X, train.y)
    assert macro_metrics(held.y.tolist(), base(held.X).tolist()).macro_f1 >= 0.99
    model, report = train_maml(train, TaskConfig(2, 1), TrainConfig(max_iterations=5000, hidden_dim=32,
                                                                     meta_lr=0.005))
    assert report.iterations_run <= 5000
    assert macro_metrics(held.y.tolist(), model.predict(held.X).tolist()).macro_f1 >= 0.99


def test_patience_stops_exactly():
    ds = separable_dataset(200)
    rng = np.random.default_rng(0)
    meta = build_meta_dataset(ds.y)
    fixed = [sample_task(meta, TaskConfig(2, 1, task_size=32), rng)]

    def stream():
        while True:
            yield fixed

    patience = 7
    # meta_lr so small the loss is constant to well below min_improvement
    cfg = TrainConfig(meta_lr=1e-12, patience=patience, min_improvement=1e-3, max_iterations=100, hidden_dim=8)
    _, report = train_maml(ds, TaskConfig(2, 1, task_size=32), cfg, task_stream=stream())
    assert report.stop_reason == "patience"
    assert report.iterations_run == patience + 1  # the first iteration sets the baseline


def test_training_is_deterministic():
    ds = separable_dataset(300)
    cfg = TrainConfig(max_iterations=60, patience=50, hidden_dim=8, seed=11)
    a, _ = train_maml(ds, TaskConfig(2, 1, task_size=64), cfg)
    b, _ = train_maml(ds, TaskConfig(2, 1, task_size=64), cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))


def test_transfer_surgery():
    src = init_model(2, 2, 8, seed=1, feature_order=["a", "b"], label_map={200: 0, 422: 1})
    old = manifest_for(["a", "b"], [200, 422])
    same = transfer_weights(src, old, old)
    assert all(np.array_equal(x, y) for x, y in zip(same.params, src.params))
    grown = transfer_weights(src, old, manifest_for(["a", "b", "c"], [200, 422]))
    assert grown.params.W1.shape == (8, 3)
    assert np.array_equal(grown.params.W1[:, :2], src.params.W1)
    assert np.array_equal(grown.params.W2, src.params.W2)
    more = transfer_weights(src, old, manifest_for(["a", "b"], [200, 422, 500]))
    assert more.params.W2.shape == (3, 8)
    assert np.array_equal(more.params.W2[:2], src.params.W2) and more.params.W2[2].any()
    assert more.label_map == {200: 0, 422: 1, 500: 2}


def test_artifact_roundtrip_and_corruption(tmp_path, quick_twin_model):
    schema, model, manifest = quick_twin_model
    path = tmp_path / "m.json"
    save_model(path, model, manifest, {"seed": 3})
    m2, man2, cfg = load_model(path)
    X = np.random.default_rng(0).normal(size=(100, model.n_features))
    assert np.array_equal(model.predict(X), m2.predict(X))
    assert np.array_equal(model.predict_proba(X), m2.predict_proba(X))
    assert man2 == manifest and cfg == {"seed": 3}
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ArtifactCorruptError):
        load_model(path)
    doc = json.loads(text)
    doc["params"]["b2"]["data"] = doc["params"]["b2"]["data"][::-1] if isinstance(doc["params"]["b2"]["data"],
                                                                                   list) else "AAAA"
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactCorruptError):
        load_model(path)


def test_default_hidden_dim_recorded(tmp_path):
    m = init_model(3, 2)
    save_model(tmp_path / "m.json", m, manifest_for(["x0", "x1", "x2"], [200, 422]), TrainConfig().digest_fields())
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["train_config"]["hidden_dim"] == 128
    assert load_model(tmp_path / "m.json")[0].hidden_dim == 128
