"""Reference implementations written independently of the package, used as test oracles."""

from __future__ import annotations

import math
import re


def tokens(text: str) -> list[str]:
    return [t for t in re.split(r"[^0-9a-z]+", text.lower()) if t]


def naive_bm25(docs: list[tuple[str, str]], query: str, k1: float = 1.5, b: float = 0.75) -> dict[str, float]:
    """Score every (id, text) document by re-scanning the whole corpus per term."""
    toks = {i: tokens(t) for i, t in docs}
    n = len(docs)
    avgdl = sum(len(v) for v in toks.values()) / n
    out = {}
    for i, dt in toks.items():
        s = 0.0
        for term in sorted(set(tokens(query))):
            df = sum(1 for v in toks.values() if term in v)
            tf = dt.count(term)
            if tf == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(dt) / avgdl))
        out[i] = s
    return out


def naive_ranking(docs, query, k=None):
    scores = naive_bm25(docs, query)
    ranked = sorted((i for i, s in scores.items() if s > 0), key=lambda i: (-scores[i], i))
    return ranked if k is None else ranked[:k]


def brute_f1(pred: list[str], gold: list[str]) -> float:
    """Multiset overlap by explicit matching, no Counter arithmetic."""
    if not pred or not gold:
        return float(pred == gold)
    remaining = list(gold)
    common = 0
    for p in pred:
        if p in remaining:
            remaining.remove(p)
            common += 1
    if common == 0:
        return 0.0
    prec, rec = common / len(pred), common / len(gold)
    return 2 * prec * rec / (prec + rec)


def pearson_formula(x, y) -> float:
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxy = sum(a * b for a, b in zip(x, y))
    sxx = sum(a * a for a in x)
    syy = sum(b * b for b in y)
    return (n * sxy - sx * sy) / math.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))


EXTERNAL = ("retrieve", "tool_call")


def pairwise_redundant(pairs, threshold=None) -> int:
    """Count external steps that repeat an earlier same-kind step.

    ``pairs`` are (kind name, argument); ``threshold=None`` means exact token
    equality, otherwise token-set Jaccard >= threshold.
    """
    flagged = 0
    for j in range(len(pairs)):
        kj, aj = pairs[j]
        if kj not in EXTERNAL:
            continue
        hit = False
        for i in range(j):
            ki, ai = pairs[i]
            if ki != kj:
                continue
            ti, tj = tokens(ai), tokens(aj)
            if threshold is None:
                hit |= ti == tj
            else:
                si, sj = set(ti), set(tj)
                sim = 1.0 if not si and not sj else len(si & sj) / len(si | sj)
                hit |= sim >= threshold
        flagged += hit
    return flagged
