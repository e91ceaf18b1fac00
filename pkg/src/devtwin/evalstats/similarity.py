"""Canonical response strings and normalized Hamming similarity."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

SENTINEL = "\x00"
FLOAT_DIGITS = 10


@dataclass(frozen=True)
class SimilarityScore:
    percent: float
    mismatches: int
    length: int


def _canon(v: Any) -> str:
    if isinstance(v, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + _canon(v[k]) for k in sorted(v, key=str)) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_canon(x) for x in v) + "]"
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            return json.dumps(str(v))
        return format(v, f".{FLOAT_DIGITS}g")
    return json.dumps(v if isinstance(v, str) else str(v))


def canonical_response(status: int, body: Any, status_only: bool = False) -> str:
    """Status code, a space, then the body as compact JSON with sorted keys and fixed float digits."""
    if status_only:
        return str(status)
    return f"{status} {_canon(body)}"


def hamming_similarity(x: str, y: str) -> SimilarityScore:
    """Percent of agreeing positions after padding the shorter string with a sentinel."""
    if not x or not y:
        raise ValueError("both strings must be non-empty")
    m = max(len(x), len(y))
    x = x.ljust(m, SENTINEL)
    y = y.ljust(m, SENTINEL)
    mismatches = sum(a != b for a, b in zip(x, y))
    return SimilarityScore((1.0 - mismatches / m) * 100.0, mismatches, m)
