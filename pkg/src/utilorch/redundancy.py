"""Redundancy scoring for repeated retrieval and tool use."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from utilorch.core import Action, InvalidInputError, TrajectoryStep

_NON_ALNUM = re.compile(r"[^0-9a-z]+")

DEFAULT_SEMANTIC_THRESHOLD = 0.8


class RedundancyKind(str, Enum):
    EXACT = "exact"
    SEMANTIC = "semantic"


@dataclass(frozen=True)
class RedundancyMode:
    kind: RedundancyKind = RedundancyKind.EXACT
    threshold: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind is RedundancyKind.SEMANTIC:
            if self.threshold is None or not 0.0 <= self.threshold <= 1.0:
                raise InvalidInputError("semantic redundancy needs a threshold in [0, 1]")
        elif self.threshold is not None:
            raise InvalidInputError("exact redundancy takes no threshold")

    @classmethod
    def exact(cls) -> RedundancyMode:
        return cls(RedundancyKind.EXACT)

    @classmethod
    def semantic(cls, threshold: float = DEFAULT_SEMANTIC_THRESHOLD) -> RedundancyMode:
        return cls(RedundancyKind.SEMANTIC, threshold)


def normalize_tokens(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters.

    >>> normalize_tokens("Who won, 1998?")
    ['who', 'won', '1998']
    """
    return [t for t in _NON_ALNUM.split(text.lower()) if t]


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def redundancy_score(
    candidate: Action, history: Sequence[TrajectoryStep], mode: RedundancyMode
) -> float:
    """Similarity of ``candidate`` to earlier actions of the same kind.

    Only retrieve and tool_call are ever redundant; every other kind scores 0.
    """
    if not candidate.kind.is_external:
        return 0.0
    cand = normalize_tokens(candidate.argument or "")
    prior = [
        normalize_tokens(s.action.argument or "")
        for s in history
        if s.action.kind is candidate.kind
    ]
    if not prior:
        return 0.0
    if mode.kind is RedundancyKind.EXACT:
        return 1.0 if any(p == cand for p in prior) else 0.0
    cand_set = set(cand)
    return max(jaccard(cand_set, p) for p in prior)


def is_redundant(score: float, mode: RedundancyMode) -> bool:
    if mode.kind is RedundancyKind.EXACT:
        return score >= 1.0
    return score >= mode.threshold


def count_redundant_calls(steps: Sequence[TrajectoryStep], mode: RedundancyMode) -> int:
    count = 0
    for i, step in enumerate(steps):
        if step.action.kind.is_external and is_redundant(
            redundancy_score(step.action, steps[:i], mode), mode
        ):
            count += 1
    return count
