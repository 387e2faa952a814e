"""Utility scoring and argmax action selection.

Each candidate action gets

    total = gain - w_cost * cost - w_unc * uncertainty - w_red * redundancy

and the highest total wins, ties going to the earlier action in the
canonical order. Three cost proxies are available: a depth-scaled per-action
step cost, a running mean of observed tokens, and an EWMA of observed latency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from utilorch.backend import SignalEstimate
from utilorch.core import ACTION_ORDER, ActionKind, AgentState, Budget, InvalidInputError

ABLATED_GAIN = 0.5


class NumericInputError(ValueError):
    pass


class SelectionError(ValueError):
    pass


class CostMode(str, Enum):
    STEP = "step"
    TOKEN = "token"
    LATENCY = "latency"


@dataclass(frozen=True)
class UtilityWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self) -> None:
        for w in (self.lambda1, self.lambda2, self.lambda3):
            if not math.isfinite(w) or w < 0:
                raise InvalidInputError("utility weights must be finite and >= 0")


@dataclass(frozen=True)
class AblationMask:
    use_gain: bool = True
    use_uncertainty: bool = True
    use_redundancy: bool = True
    allow_stop: bool = True

    @property
    def is_full(self) -> bool:
        return self.use_gain and self.use_uncertainty and self.use_redundancy and self.allow_stop


@dataclass(frozen=True)
class UtilityBreakdown:
    """Raw utility components for one candidate plus the masked total."""

    action_kind: ActionKind
    gain: float
    cost: float
    uncertainty: float
    redundancy: float
    total: float


def _kinds(default: Mapping[str, float]) -> dict[ActionKind, float]:
    return {ActionKind(k): v for k, v in default.items()}


@dataclass(frozen=True)
class CostModelConfig:
    base_step_cost: Mapping[ActionKind, float] = field(
        default_factory=lambda: _kinds(
            {"respond": 0.2, "retrieve": 0.5, "tool_call": 0.6, "verify": 0.4, "stop": 0.0}
        )
    )
    token_prior: Mapping[ActionKind, float] = field(
        default_factory=lambda: _kinds(
            {"respond": 150, "retrieve": 250, "tool_call": 250, "verify": 200, "stop": 0}
        )
    )
    latency_prior_seconds: Mapping[ActionKind, float] = field(
        default_factory=lambda: _kinds(
            {"respond": 0.4, "retrieve": 0.6, "tool_call": 0.6, "verify": 0.5, "stop": 0.0}
        )
    )
    token_normalizer: int = 1000
    latency_normalizer_seconds: float = 2.0
    latency_ewma_alpha: float = 0.5

    def __post_init__(self) -> None:
        for name in ("base_step_cost", "token_prior", "latency_prior_seconds"):
            table = {ActionKind(k): float(v) for k, v in getattr(self, name).items()}
            if set(table) != set(ACTION_ORDER):
                raise InvalidInputError(f"{name} must cover all five actions")
            object.__setattr__(self, name, table)
        if any(not 0.0 <= c <= 1.0 for c in self.base_step_cost.values()):
            raise InvalidInputError("base step costs must lie in [0, 1]")
        if any(v < 0 for v in self.token_prior.values()) or any(
            v < 0 for v in self.latency_prior_seconds.values()
        ):
            raise InvalidInputError("cost priors must be non-negative")
        if self.token_normalizer <= 0 or self.latency_normalizer_seconds <= 0:
            raise InvalidInputError("cost normalizers must be positive")
        if not 0.0 < self.latency_ewma_alpha <= 1.0:
            raise InvalidInputError("latency_ewma_alpha must lie in (0, 1]")


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def uncertainty_for(kind: ActionKind, signals: SignalEstimate) -> float:
    """Per-action uncertainty penalty.

    Committing to an answer (respond, stop) under uncertain evidence is
    penalized; gathering more evidence is not.
    """
    return signals.uncertainty if kind.is_terminal else 0.0


def utility_total(
    gain: float,
    cost: float,
    uncertainty: float,
    redundancy: float,
    weights: UtilityWeights,
    mask: AblationMask,
) -> float:
    gain_term = gain if mask.use_gain else ABLATED_GAIN
    unc_term = uncertainty if mask.use_uncertainty else 0.0
    red_term = redundancy if mask.use_redundancy else 0.0
    return gain_term - weights.lambda1 * cost - weights.lambda2 * unc_term - weights.lambda3 * red_term


def compute_utility(
    kind: ActionKind,
    signals: SignalEstimate,
    cost: float,
    redundancy: float,
    weights: UtilityWeights,
    mask: AblationMask,
) -> UtilityBreakdown:
    gain = signals.gain(kind)
    uncertainty = uncertainty_for(kind, signals)
    for name, v in (("gain", gain), ("cost", cost), ("uncertainty", uncertainty), ("redundancy", redundancy)):
        if not math.isfinite(v):
            raise NumericInputError(f"{name} is not finite: {v!r}")
    total = utility_total(gain, cost, uncertainty, redundancy, weights, mask)
    return UtilityBreakdown(kind, gain, cost, uncertainty, redundancy, total)


def recompute_total(b: UtilityBreakdown, weights: UtilityWeights, mask: AblationMask) -> float:
    return utility_total(b.gain, b.cost, b.uncertainty, b.redundancy, weights, mask)


# --- cost proxies --------------------------------------------------------------


def step_cost_of(kind: ActionKind, state: AgentState, config: CostModelConfig, budget: Budget) -> float:
    depth = 1.0 + state.step_count / budget.max_steps
    return _clip01(config.base_step_cost[kind] * depth / 2.0)


def estimated_incremental_tokens(kind: ActionKind, state: AgentState, config: CostModelConfig) -> float:
    seen = [s.tokens_this_step for s in state.history if s.action.kind is kind]
    if not seen:
        return config.token_prior[kind]
    return sum(seen) / len(seen)


def token_cost_of(kind: ActionKind, state: AgentState, config: CostModelConfig) -> float:
    return _clip01(estimated_incremental_tokens(kind, state, config) / config.token_normalizer)


def ewma_latency(kind: ActionKind, state: AgentState, config: CostModelConfig) -> float:
    alpha = config.latency_ewma_alpha
    value = config.latency_prior_seconds[kind]
    for s in state.history:
        if s.action.kind is kind:
            value = alpha * s.latency_this_step_seconds + (1.0 - alpha) * value
    return value


def latency_cost_of(kind: ActionKind, state: AgentState, config: CostModelConfig) -> float:
    return _clip01(ewma_latency(kind, state, config) / config.latency_normalizer_seconds)


def action_cost(
    kind: ActionKind, state: AgentState, mode: CostMode, config: CostModelConfig, budget: Budget
) -> float:
    if mode is CostMode.STEP:
        return step_cost_of(kind, state, config, budget)
    if mode is CostMode.TOKEN:
        return token_cost_of(kind, state, config)
    return latency_cost_of(kind, state, config)


def select_action(candidates: Sequence[UtilityBreakdown], mask: AblationMask | None = None) -> ActionKind:
    """Argmax over candidate totals; earlier canonical action wins ties."""
    pool = [c for c in candidates if not (mask and not mask.allow_stop and c.action_kind is ActionKind.STOP)]
    if not pool:
        raise SelectionError("no candidate actions to select from")
    best = min(pool, key=lambda c: (-c.total, c.action_kind.rank))
    return best.action_kind
