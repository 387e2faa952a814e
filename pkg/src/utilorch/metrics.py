"""Answer-quality and summary statistics used by the evaluation harness."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


class MetricError(ValueError):
    pass


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


@dataclass(frozen=True)
class F1Result:
    f1: float
    precision: float
    recall: float


def f1_score(prediction: str, gold: str) -> F1Result:
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(gold).split()
    if not pred or not ref:
        same = float(pred == ref)
        return F1Result(same, same, same)
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return F1Result(0.0, 0.0, 0.0)
    precision = common / len(pred)
    recall = common / len(ref)
    return F1Result(2 * precision * recall / (precision + recall), precision, recall)


def efficiency(f1: float, tokens: float) -> float:
    if not tokens > 0:
        raise MetricError(f"efficiency needs positive tokens, got {tokens!r}")
    return f1 / tokens


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) != len(y):
        raise MetricError("pearson inputs differ in length")
    if len(x) < 2:
        raise MetricError("pearson needs at least two points")
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    # test for constant input directly: the centred sum of squares of
    # identical values can come out as rounding noise instead of 0
    if np.ptp(xa) == 0.0 or np.ptp(ya) == 0.0:
        raise MetricError("pearson is undefined for zero-variance input")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class Bucket:
    lower: float
    upper: float
    count: int
    continue_rate: Optional[float]


DEFAULT_EDGES = (0.0, 0.33, 0.66, 1.0)


def bucket_index(value: float, edges: Sequence[float]) -> int:
    """Index of the half-open bucket holding ``value``; the last one is closed."""
    last = len(edges) - 2
    if value >= edges[-1]:
        return last
    for i in range(last + 1):
        if edges[i] <= value < edges[i + 1]:
            return i
    return 0


def bucket_continue_rate(
    records: Sequence[tuple[float, bool]], edges: Sequence[float] = DEFAULT_EDGES
) -> list[Bucket]:
    edges = list(edges)
    if (
        len(edges) < 2
        or edges[0] != 0.0
        or edges[-1] != 1.0
        or any(b <= a for a, b in zip(edges, edges[1:]))
    ):
        raise MetricError("bucket edges must ascend strictly from 0 to 1")
    counts = [0] * (len(edges) - 1)
    cont = [0] * (len(edges) - 1)
    for gain, continued in records:
        i = bucket_index(gain, edges)
        counts[i] += 1
        cont[i] += bool(continued)
    return [
        Bucket(edges[i], edges[i + 1], counts[i], cont[i] / counts[i] if counts[i] else None)
        for i in range(len(counts))
    ]
