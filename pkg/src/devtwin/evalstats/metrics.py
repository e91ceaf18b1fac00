"""Macro-averaged precision, recall and F1 over one-vs-rest confusion counts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence


@dataclass
class ClassMetrics:
    classes: list
    tp: dict
    fp: dict
    fn: dict
    precision: dict
    recall: dict
    f1: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        per = {str(c): {"tp": self.tp[c], "fp": self.fp[c], "fn": self.fn[c], "precision": self.precision[c],
                        "recall": self.recall[c], "f1": self.f1[c]} for c in self.classes}
        return {"macro_precision": self.macro_precision, "macro_recall": self.macro_recall,
                "macro_f1": self.macro_f1, "per_class": per}


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def macro_metrics(y_true: Sequence[Hashable], y_pred: Sequence[Hashable]) -> ClassMetrics:
    """Unweighted means over the union of observed true and predicted classes.

    A zero denominator yields 0 for that class's precision, recall or F1.
    """
    if len(y_true) != len(y_pred):
        raise ValueError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if len(y_true) == 0:
        raise ValueError("empty input")
    classes = sorted(set(y_true) | set(y_pred), key=lambda c: (str(type(c)), c))
    tp = dict.fromkeys(classes, 0)
    fp = dict.fromkeys(classes, 0)
    fn = dict.fromkeys(classes, 0)
    for t, p in zip(y_true, y_pred):
        if t == p:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    prec = {c: _ratio(tp[c], tp[c] + fp[c]) for c in classes}
    rec = {c: _ratio(tp[c], tp[c] + fn[c]) for c in classes}
    f1 = {c: _ratio(2 * prec[c] * rec[c], prec[c] + rec[c]) if prec[c] + rec[c] > 0 else 0.0 for c in classes}
    k = len(classes)
    return ClassMetrics(classes, tp, fp, fn, prec, rec, f1,
                        sum(prec.values()) / k, sum(rec.values()) / k, sum(f1.values()) / k)
