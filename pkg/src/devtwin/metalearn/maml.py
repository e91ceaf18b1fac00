"""MAML training loop, few-shot adaptation and weight surgery for schema drift."""
from __future__ import annotations

import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .model import (DEFAULT_HIDDEN, MlpModel, Params, glorot_uniform, hvp, init_params, input_affine,
                    loss_and_grads, loss_grads_scores)
from .tasks import Task, TaskConfig, build_meta_dataset, sample_task

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class TransferError(ValueError):
    pass


@dataclass
class TrainConfig:
    meta_lr: float = 0.001
    inner_lr: float = 0.05
    adaptation_steps: int = 1
    max_iterations: int = 5000
    patience: int = 100
    min_improvement: float = 1e-4
    smoothing_window: int = 10
    hidden_dim: int = DEFAULT_HIDDEN
    seed: int = 0
    second_order: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.inner_lr > self.meta_lr:
            raise ValueError("inner_lr must exceed meta_lr")
        if not self.patience < self.max_iterations:
            raise ValueError("patience must be smaller than max_iterations")
        if self.adaptation_steps < 1:
            raise ValueError("adaptation_steps must be >= 1")

    @classmethod
    def for_adaptation(cls, **kw) -> "TrainConfig":
        kw.setdefault("max_iterations", 1000)
        kw.setdefault("patience", 20)
        return cls(**kw)

    def digest_fields(self) -> dict:
        return {k: getattr(self, k) for k in ("meta_lr", "inner_lr", "adaptation_steps", "max_iterations",
                                              "patience", "min_improvement", "smoothing_window",
                                              "hidden_dim", "seed", "second_order")}


@dataclass
class TrainReport:
    iterations_run: int = 0
    loss_curve: list[float] = field(default_factory=list)
    accuracy_curve: list[float] = field(default_factory=list)
    wall_time_ms: float = 0.0
    stop_reason: str = "max-iterations"

    def to_dict(self) -> dict:
        return {"iterations_run": self.iterations_run, "stop_reason": self.stop_reason,
                "wall_time_ms": self.wall_time_ms, "final_loss": self.loss_curve[-1] if self.loss_curve else None,
                "final_accuracy": self.accuracy_curve[-1] if self.accuracy_curve else None}


class Adam:
    def __init__(self, params: Params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = Params.zeros_like(params)
        self.v = Params.zeros_like(params)
        self.t = 0

    def step(self, params: Params, grads: Params) -> Params:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m = Params(*(b1 * m + (1 - b1) * g for m, g in zip(self.m, grads)))
        self.v = Params(*(b2 * v + (1 - b2) * g * g for v, g in zip(self.v, grads)))
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        return Params(*(p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                        for p, m, v in zip(params, self.m, self.v)))


class EarlyStopping:
    """Stop once ``patience`` consecutive iterations fail to beat the best smoothed loss."""

    def __init__(self, patience: int, min_improvement: float, window: int = 10):
        self.patience = patience
        self.min_improvement = min_improvement
        self.recent: deque[float] = deque(maxlen=window)
        self.best = math.inf
        self.stale = 0

    def update(self, loss: float) -> bool:
        self.recent.append(loss)
        smoothed = sum(self.recent) / len(self.recent)
        if smoothed < self.best - self.min_improvement:
            self.best = smoothed
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def _params_of(model) -> Params:
    return model.params if isinstance(model, MlpModel) else model


def inner_adapt(model, X: np.ndarray, y: np.ndarray, inner_lr: float, steps: int = 1,
                classes=None) -> Params:
    """Plain gradient steps on the adaptation split; the input is left untouched."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    p = _params_of(model).copy()
    for _ in range(steps):
        _, g = loss_and_grads(p, X, y, classes)
        p = p.axpy(-inner_lr, g)
    return p


def _task_step(params: Params, X: np.ndarray, task: Task, cfg: TrainConfig):
    Xa, Xe = X[task.adapt_idx], X[task.eval_idx]
    cls = task.classes
    trail = [params]
    p = params
    for _ in range(cfg.adaptation_steps):
        _, g = loss_and_grads(p, Xa, task.adapt_y, cls)
        p = p.axpy(-cfg.inner_lr, g)
        trail.append(p)
    loss, grad, scores = loss_grads_scores(p, Xe, task.eval_y, cls)
    if cfg.second_order:
        # back-propagate through each inner step: v <- (I - lr * H) v
        for q in reversed(trail[:-1]):
            grad = grad.axpy(-cfg.inner_lr, hvp(q, Xa, task.adapt_y, grad, cls))
    return loss, grad, float(np.mean(np.argmax(scores, axis=1) == task.eval_y))


def meta_gradient(params: Params, X: np.ndarray, tasks: list[Task], cfg: TrainConfig,
                  pool: ThreadPoolExecutor | None = None) -> tuple[float, Params, float]:
    """Average evaluation loss, meta-gradient and accuracy over a batch of tasks."""
    step = lambda t: _task_step(params, X, t, cfg)  # noqa: E731
    results = list(pool.map(step, tasks)) if pool is not None else [step(t) for t in tasks]
    # fixed-order reduction keeps parallel runs bit-identical to serial ones
    loss = 0.0
    acc = 0.0
    grad = Params.zeros_like(params)
    for l, g, a in results:
        loss += l
        acc += a
        grad = grad + g
    m = len(tasks)
    return loss / m, grad.scale(1.0 / m), acc / m


def train_maml(processed, task_cfg: TaskConfig | None = None, train_cfg: TrainConfig | None = None,
               init: MlpModel | None = None, task_stream: Iterable[list[Task]] | None = None
               ) -> tuple[MlpModel, TrainReport]:
    """Meta-train (or, with ``init``, fine-tune) a classifier on a processed dataset.

    ``task_stream`` overrides task sampling with pre-built task batches.
    """
    task_cfg = task_cfg or TaskConfig()
    cfg = train_cfg or TrainConfig()
    X = np.asarray(processed.X, dtype=np.float64)
    manifest = processed.manifest
    meta = build_meta_dataset(processed.y)
    task_cfg.check(meta)
    init_seq, task_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    if init is None:
        params = init_params(X.shape[1], len(manifest.label_map), cfg.hidden_dim, np.random.default_rng(init_seq))
        shift, scale = input_affine(manifest, X)
    else:
        if init.n_features != X.shape[1] or init.n_classes != len(manifest.label_map):
            raise TrainingError("initial model does not match the dataset's features/classes")
        params = init.params.copy()
        shift, scale = init.input_shift, init.input_scale
        if shift is None:
            shift, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    X = (X - shift) / scale
    rng = np.random.default_rng(task_seq)
    opt = Adam(params, cfg.meta_lr)
    stopper = EarlyStopping(cfg.patience, cfg.min_improvement, cfg.smoothing_window)
    report = TrainReport()
    stream = iter(task_stream) if task_stream is not None else None
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    t0 = time.perf_counter()
    try:
        for it in range(cfg.max_iterations):
            if stream is not None:
                tasks = next(stream)
            else:
                tasks = [sample_task(meta, task_cfg, rng) for _ in range(task_cfg.m_tasks)]
            loss, grad, acc = meta_gradient(params, X, tasks, cfg, pool)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grad):
                raise TrainingError(f"non-finite loss/gradient at iteration {it + 1} (loss={loss}); "
                                    f"last finite loss {report.loss_curve[-1] if report.loss_curve else None}")
            params = opt.step(params, grad)
            report.loss_curve.append(loss)
            report.accuracy_curve.append(acc)
            report.iterations_run = it + 1
            if stopper.update(loss):
                report.stop_reason = "patience"
                break
    finally:
        if pool is not None:
            pool.shutdown()
    report.wall_time_ms = (time.perf_counter() - t0) * 1000.0
    log.info("trained %d iterations (%s), final loss %.4f", report.iterations_run, report.stop_reason,
             report.loss_curve[-1])
    model = MlpModel(params, list(manifest.feature_order), dict(manifest.label_map),
                     input_shift=np.array(shift, dtype=np.float64), input_scale=np.array(scale, dtype=np.float64))
    return model, report


def transfer_weights(model: MlpModel, old_manifest, new_manifest, seed: int = 0) -> MlpModel:
    """Resize a model to a new feature/label layout, keeping what is shared.

    Input columns are matched by feature name and output rows by status code;
    anything new is freshly initialized.
    """
    old_feats = list(old_manifest.feature_order)
    new_feats = list(new_manifest.feature_order)
    old_codes = dict(old_manifest.label_map)
    new_codes = dict(new_manifest.label_map)
    if not (set(old_feats) & set(new_feats)) and not (set(old_codes) & set(new_codes)):
        raise TransferError("source and target share no features and no status codes")
    p = model.params
    h = p.W1.shape[0]
    rng = np.random.default_rng(seed)
    W1 = glorot_uniform(rng, h, len(new_feats))
    W2 = glorot_uniform(rng, len(new_codes), h)
    b2 = np.zeros(len(new_codes))
    for j, name in enumerate(new_feats):
        if name in old_feats:
            W1[:, j] = p.W1[:, old_feats.index(name)]
    for code, row in new_codes.items():
        if code in old_codes:
            W2[row] = p.W2[old_codes[code]]
            b2[row] = p.b2[old_codes[code]]
    if hasattr(new_manifest, "feature_kinds"):
        shift, scale = input_affine(new_manifest)
    else:
        shift, scale = np.zeros(len(new_feats)), np.ones(len(new_feats))
    if model.input_shift is not None:
        # columns with no declared domain keep the source model's mapping
        for j, name in enumerate(new_feats):
            kind = getattr(new_manifest, "feature_kinds", {}).get(name)
            if name in old_feats and kind not in ("integer", "real", "boolean", "flag", "enum"):
                i = old_feats.index(name)
                shift[j], scale[j] = model.input_shift[i], model.input_scale[i]
    return MlpModel(Params(W1, p.b1.copy(), W2, b2), new_feats, new_codes, model.activation, shift, scale)


def adapt_model(base: MlpModel, processed, task_cfg: TaskConfig | None = None,
                train_cfg: TrainConfig | None = None, base_manifest=None) -> tuple[MlpModel, TrainReport]:
    """Few-shot fine-tune ``base`` on data preprocessed under its own (new) manifest."""
    task_cfg = task_cfg or TaskConfig.for_adaptation()
    train_cfg = train_cfg or TrainConfig.for_adaptation()
    base_manifest = base_manifest or base  # models carry feature_order and label_map
    start = transfer_weights(base, base_manifest, processed.manifest, seed=train_cfg.seed)
    return train_maml(processed, task_cfg, train_cfg, init=start)
