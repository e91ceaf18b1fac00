"""Wilcoxon signed-rank test and Cliff's delta."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EXACT_MAX_N = 25
ALTERNATIVES = ("two-sided", "greater", "less")


@dataclass(frozen=True)
class StatResult:
    statistic: float
    p_value: float
    method: str
    n_effective: int

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "method": self.method,
                "n_effective": self.n_effective}


def _avg_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_tails(doubled: np.ndarray, w2: int) -> tuple[float, float]:
    """P(W+ <= w) and P(W+ >= w) under the sign-flip null; ranks are passed doubled (integers)."""
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    counts /= 2.0 ** len(doubled)
    return float(counts[:w2 + 1].sum()), float(counts[w2:].sum())


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], alternative: str = "two-sided") -> StatResult:
    """Paired signed-rank test on a - b; the statistic is W+, the sum of positive ranks.

    Zero differences are dropped and tied magnitudes share their average
    rank. Up to 25 non-zero pairs the null distribution is enumerated
    exactly; above that a tie- and continuity-corrected normal
    approximation is used.
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length 1-d, got {a.shape} and {b.shape}")
    if len(a) == 0:
        raise ValueError("empty input")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return StatResult(0.0, 1.0, "exact", 0)
    ranks = _avg_ranks(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        lo, hi = _exact_tails(doubled, int(round(2 * w)))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
        sd = math.sqrt(var)
        # continuity-corrected one-sided tails
        lo = 0.5 * math.erfc(-((w - mean + 0.5) / sd) / math.sqrt(2))
        hi = 0.5 * math.erfc(((w - mean - 0.5) / sd) / math.sqrt(2))
        method = "normal-approximation"
    if alternative == "greater":
        p = hi
    elif alternative == "less":
        p = lo
    else:
        p = 2.0 * min(lo, hi)
    return StatResult(w, float(min(1.0, max(0.0, p))), method, n)


def cliffs_delta(a: Sequence[float], b: Sequence[float]) -> float:
    """(#(a_i > b_j) - #(a_i < b_j)) / (|a|·|b|), counted exactly via sorting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    greater = int(np.searchsorted(b, a, side="left").sum())
    less = int((len(b) - np.searchsorted(b, a, side="right")).sum())
    return (greater - less) / (len(a) * len(b))
