"""Three-layer classifier with analytic gradients and Hessian-vector products.

Hidden units use the logistic sigmoid; the output layer is normalized with a
softmax and trained with mean cross-entropy. ``classes`` restricts the
softmax to a subset of output units, which is how N-way tasks drawn from a
C-class dataset are scored without reshuffling the output head.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_HIDDEN = 128


class Params(NamedTuple):
    W1: np.ndarray  # hidden x input
    b1: np.ndarray  # hidden
    W2: np.ndarray  # output x hidden
    b2: np.ndarray  # output

    def __add__(self, other):  # type: ignore[override]
        return Params(*(a + b for a, b in zip(self, other)))

    def scale(self, s: float) -> "Params":
        return Params(*(a * s for a in self))

    def axpy(self, a: float, other: "Params") -> "Params":
        """self + a * other"""
        return Params(*(x + a * y for x, y in zip(self, other)))

    def copy(self) -> "Params":
        return Params(*(np.array(a, dtype=np.float64, copy=True) for a in self))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self])

    def unflat(self, v: np.ndarray) -> "Params":
        out, i = [], 0
        for a in self:
            out.append(v[i:i + a.size].reshape(a.shape))
            i += a.size
        return Params(*out)

    @staticmethod
    def zeros_like(p: "Params") -> "Params":
        return Params(*(np.zeros_like(a) for a in p))


@dataclass
class MlpModel:
    """Classifier plus its input contract.

    ``input_shift``/``input_scale`` are a fixed (not trained) affine map
    applied to raw feature vectors before the first layer; None means
    identity. They come from the schema domains recorded in the manifest.
    """
    params: Params
    feature_order: list[str] = field(default_factory=list)
    label_map: dict[int, int] = field(default_factory=dict)
    activation: str = "sigmoid"
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def normalize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.input_shift is None:
            return X
        return (X - self.input_shift) / self.input_scale

    @property
    def hidden_dim(self) -> int:
        return self.params.W1.shape[0]

    @property
    def n_features(self) -> int:
        return self.params.W1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.params.W2.shape[0]

    def freeze(self) -> "MlpModel":
        for a in (*self.params, self.input_shift, self.input_scale):
            if a is not None:
                a.flags.writeable = False
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return forward(self, X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(logits(self.params, self.normalize(np.atleast_2d(X))), axis=1)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_params(n_features: int, n_classes: int, hidden_dim: int = DEFAULT_HIDDEN,
                seed: int | np.random.Generator = 0) -> Params:
    if n_features < 1 or n_classes < 2:
        raise ValueError("need n_features >= 1 and n_classes >= 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    W1 = glorot_uniform(rng, hidden_dim, n_features)
    W2 = glorot_uniform(rng, n_classes, hidden_dim)
    return Params(W1, np.zeros(hidden_dim), W2, np.zeros(n_classes))


def init_model(n_features: int, n_classes: int, hidden_dim: int = DEFAULT_HIDDEN,
               seed: int | np.random.Generator = 0, feature_order: Sequence[str] | None = None,
               label_map: dict[int, int] | None = None) -> MlpModel:
    params = init_params(n_features, n_classes, hidden_dim, seed)
    return MlpModel(params,
                    list(feature_order) if feature_order is not None else [f"x{i}" for i in range(n_features)],
                    dict(label_map) if label_map is not None else {i: i for i in range(n_classes)})


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and much faster than masked exp
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_dims(p: Params, X: np.ndarray):
    if X.shape[-1] != p.W1.shape[1]:
        raise ValueError(f"expected {p.W1.shape[1]} features, got {X.shape[-1]}")


def logits(p: Params, X: np.ndarray) -> np.ndarray:
    _check_dims(p, X)
    return sigmoid(X @ p.W1.T + p.b1) @ p.W2.T + p.b2


def forward(p: Params | MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one vector (1-D) or a batch (2-D)."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(p, MlpModel):
        x, p = p.normalize(x), p.params
    return softmax(logits(p, x))


def input_affine(manifest, X: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-column (shift, scale) mapping each feature's domain onto [-1, 1].

    Domains come from the manifest: numeric bounds, {0,1} for booleans and
    flags, codes 0..n (n = unknown token) for enums. Columns without a known
    domain fall back to the observed range in ``X``, or identity.
    """
    shift, scale = [], []
    for j, name in enumerate(manifest.feature_order):
        kind = manifest.feature_kinds.get(name)
        lo = hi = None
        if kind in ("boolean", "flag"):
            lo, hi = 0.0, 1.0
        elif kind == "enum":
            lo, hi = 0.0, float(len(manifest.enum_codes[name]))
        elif kind in ("integer", "real", "numeric") and name in manifest.clamp_bounds:
            lo, hi = manifest.clamp_bounds[name]
        if (lo is None or hi is None) and X is not None and len(X):
            lo, hi = float(np.min(X[:, j])), float(np.max(X[:, j]))
        if lo is None or hi is None or not hi > lo:
            shift.append(0.0 if lo is None or hi is None else float(lo))
            scale.append(1.0)
        else:
            shift.append((lo + hi) / 2.0)
            scale.append((hi - lo) / 2.0)
    return np.array(shift, dtype=np.float64), np.array(scale, dtype=np.float64)


def _select(classes):
    return slice(None) if classes is None else np.asarray(classes)


def loss_and_grads(p: Params, X: np.ndarray, y: np.ndarray, classes=None) -> tuple[float, Params]:
    """Mean cross-entropy and its exact gradient.

    ``y`` indexes into ``classes`` when given (task-local labels), otherwise
    directly into the output units.
    """
    loss, grads, _ = loss_grads_scores(p, X, y, classes)
    return loss, grads


def loss_grads_scores(p: Params, X: np.ndarray, y: np.ndarray, classes=None):
    """Like loss_and_grads, also returning the (restricted, shifted) logits."""
    _check_dims(p, X)
    n = X.shape[0]
    cols = _select(classes)
    a = sigmoid(X @ p.W1.T + p.b1)
    z2 = (a @ p.W2.T + p.b2)[:, cols]
    z2 = z2 - z2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z2).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z2[rows, y]))
    g = np.exp(z2 - logsum[:, None])
    g[rows, y] -= 1.0
    g /= n
    if classes is None:
        g2 = g
    else:
        g2 = np.zeros((n, p.W2.shape[0]))
        g2[:, cols] = g
    dW2 = g2.T @ a
    db2 = g2.sum(axis=0)
    g1 = (g2 @ p.W2) * a * (1.0 - a)
    return loss, Params(g1.T @ X, g1.sum(axis=0), dW2, db2), z2


def hvp(p: Params, X: np.ndarray, y: np.ndarray, v: Params, classes=None) -> Params:
    """Exact Hessian-vector product of the mean cross-entropy (R-operator)."""
    n = X.shape[0]
    cols = _select(classes)
    a = sigmoid(X @ p.W1.T + p.b1)
    s1 = a * (1.0 - a)
    ra = s1 * (X @ v.W1.T + v.b1)
    z2 = (a @ p.W2.T + p.b2)[:, cols]
    rz2 = (ra @ p.W2.T + a @ v.W2.T + v.b2)[:, cols]
    prob = softmax(z2)
    rprob = prob * (rz2 - (prob * rz2).sum(axis=1, keepdims=True))
    g = prob.copy()
    g[np.arange(n), y] -= 1.0
    g /= n
    rg = rprob / n
    C = p.W2.shape[0]
    if classes is None:
        g2, rg2 = g, rg
    else:
        g2 = np.zeros((n, C))
        rg2 = np.zeros((n, C))
        g2[:, cols] = g
        rg2[:, cols] = rg
    rW2 = rg2.T @ a + g2.T @ ra
    rb2 = rg2.sum(axis=0)
    da = g2 @ p.W2
    rda = rg2 @ p.W2 + g2 @ v.W2
    rg1 = rda * s1 + da * (1.0 - 2.0 * a) * ra
    return Params(rg1.T @ X, rg1.sum(axis=0), rW2, rb2)


def loss_only(p: Params, X: np.ndarray, y: np.ndarray, classes=None) -> float:
    z2 = logits(p, X)[:, _select(classes)]
    z2 = z2 - z2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z2).sum(axis=1))
    return float(np.mean(logsum - z2[np.arange(X.shape[0]), y]))
