"""Meta-dataset grouping and N-way K-shot task sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TaskError(ValueError):
    pass


@dataclass
class MetaDataset:
    """Row indices of a processed dataset grouped by class."""
    class_index: dict[int, np.ndarray]
    n_rows: int

    @property
    def classes(self) -> list[int]:
        return sorted(self.class_index)


def build_meta_dataset(labels) -> MetaDataset:
    """Partition row indices by label. Accepts a label array or a ProcessedDataset."""
    y = np.asarray(getattr(labels, "y", labels))
    classes = np.unique(y)
    if len(classes) < 2:
        raise TaskError(f"meta-dataset needs at least 2 classes, found {len(classes)}")
    return MetaDataset({int(c): np.flatnonzero(y == c) for c in classes}, len(y))


@dataclass
class TaskConfig:
    n_ways: int = 2
    k_shots: int = 1
    m_tasks: int = 10
    task_size: int = 256

    def __post_init__(self):
        if self.n_ways < 2 or self.k_shots < 1 or self.m_tasks < 1:
            raise ValueError("need n_ways >= 2, k_shots >= 1, m_tasks >= 1")
        if self.n_ways * self.k_shots >= self.task_size:
            raise ValueError("n_ways * k_shots must leave room for an evaluation split")

    def check(self, meta: MetaDataset):
        if self.n_ways > len(meta.class_index):
            raise TaskError(f"n_ways={self.n_ways} exceeds the {len(meta.class_index)} available classes")

    @classmethod
    def for_adaptation(cls, **kw) -> "TaskConfig":
        kw.setdefault("task_size", 64)
        return cls(**kw)


@dataclass
class Task:
    classes: np.ndarray  # original class ids, sorted; remapped label j <-> classes[j]
    adapt_idx: np.ndarray
    adapt_y: np.ndarray
    eval_idx: np.ndarray
    eval_y: np.ndarray

    @property
    def n_ways(self) -> int:
        return len(self.classes)


def sample_task(meta: MetaDataset, cfg: TaskConfig, rng: np.random.Generator, balanced: bool = False) -> Task:
    """Draw one task: N distinct classes, K adaptation rows each, the rest for evaluation.

    Evaluation rows are drawn uniformly from the chosen classes' remaining
    rows, which keeps the dataset's class frequencies; ``balanced`` instead
    splits the evaluation quota evenly across classes.
    """
    cfg.check(meta)
    all_classes = meta.classes
    chosen = np.sort(rng.choice(len(all_classes), size=cfg.n_ways, replace=False))
    classes = np.array([all_classes[i] for i in chosen], dtype=np.int64)
    budget = cfg.task_size - cfg.n_ways * cfg.k_shots
    a_idx, a_y, rest, rest_y = [], [], [], []
    for j, c in enumerate(classes):
        rows = meta.class_index[int(c)]
        if len(rows) < cfg.k_shots + 1:
            raise TaskError(f"class {c} has {len(rows)} rows, needs at least {cfg.k_shots + 1}")
        perm = rng.permutation(rows)
        a_idx.append(perm[:cfg.k_shots])
        a_y.append(np.full(cfg.k_shots, j))
        rest.append(perm[cfg.k_shots:])
        rest_y.append(np.full(len(perm) - cfg.k_shots, j))
    if balanced:
        quota = np.full(cfg.n_ways, budget // cfg.n_ways)
        quota[: budget % cfg.n_ways] += 1
        e_idx = np.concatenate([r[:q] for r, q in zip(rest, quota)])
        e_y = np.concatenate([r[:q] for r, q in zip(rest_y, quota)])
    else:
        # stratified: per-class quotas proportional to class frequency
        avail = np.array([len(r) for r in rest], dtype=np.float64)
        sizes = np.array([len(meta.class_index[int(c)]) for c in classes], dtype=np.float64)
        quota = _largest_remainder(budget * sizes / sizes.sum(), budget)
        quota = np.minimum(quota, avail.astype(np.int64))
        e_idx = np.concatenate([r[:q] for r, q in zip(rest, quota)])
        e_y = np.concatenate([r[:q] for r, q in zip(rest_y, quota)])
    return Task(classes, np.concatenate(a_idx), np.concatenate(a_y).astype(np.int64),
                e_idx, e_y.astype(np.int64))


def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(shares).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(shares - base), kind="stable")
        base[order[:short]] += 1
    return base
