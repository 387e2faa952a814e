"""Action space, agent state, trajectory records and termination checks.

Every orchestration strategy in :mod:`utilorch.orchestrators` builds its
episodes out of these types. States are treated as values: ``apply_step``
returns a new :class:`AgentState` rather than mutating the old one.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from utilorch.backend import SignalEstimate
    from utilorch.utility import UtilityBreakdown

DEFAULT_SNIPPET_CHARS = 1500


class InvalidInputError(ValueError):
    pass


class SequencingError(RuntimeError):
    pass


class ActionKind(str, Enum):
    RESPOND = "respond"
    RETRIEVE = "retrieve"
    TOOL_CALL = "tool_call"
    VERIFY = "verify"
    STOP = "stop"

    @property
    def rank(self) -> int:
        """Position in the canonical order, used for tie-breaking."""
        return ACTION_ORDER.index(self)

    @property
    def is_external(self) -> bool:
        return self in (ActionKind.RETRIEVE, ActionKind.TOOL_CALL)

    @property
    def is_terminal(self) -> bool:
        return self in (ActionKind.RESPOND, ActionKind.STOP)


ACTION_ORDER: tuple[ActionKind, ...] = tuple(ActionKind)


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    argument: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind.is_external and not (self.argument and self.argument.strip()):
            raise InvalidInputError(f"{self.kind.value} requires a non-empty argument")
        if self.kind.is_terminal and self.argument is not None:
            raise InvalidInputError(f"{self.kind.value} takes no argument")


class ObservationSource(str, Enum):
    RETRIEVAL = "retrieval"
    TOOL = "tool"
    VERIFICATION = "verification"
    NONE = "none"


@dataclass(frozen=True)
class Observation:
    source: ObservationSource = ObservationSource.NONE
    content: str = ""
    token_count: int = 0
    latency_seconds: float = 0.0

    def __post_init__(self) -> None:
        if self.token_count < 0 or self.latency_seconds < 0:
            raise InvalidInputError("observation counters must be non-negative")
        if self.source is ObservationSource.NONE and (self.content or self.token_count):
            raise InvalidInputError("an empty observation carries no content")


@dataclass(frozen=True)
class Budget:
    max_steps: int = 6
    max_total_tokens: Optional[int] = None
    max_consecutive_parse_failures: int = 3

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise InvalidInputError("max_steps must be >= 1")
        if self.max_total_tokens is not None and self.max_total_tokens < 1:
            raise InvalidInputError("max_total_tokens must be >= 1 when set")
        if self.max_consecutive_parse_failures < 1:
            raise InvalidInputError("max_consecutive_parse_failures must be >= 1")


@dataclass(frozen=True)
class Evidence:
    text: str
    source: ObservationSource


@dataclass(frozen=True)
class TrajectoryStep:
    """One executed action together with its cost accounting.

    ``utilities`` holds the breakdown of every candidate the policy scored at
    this step (empty for non-policy strategies). ``tool_invoked`` is true when
    the step called the retrieval tool, which is what ``tool_calls`` counts.
    """

    index: int
    action: Action
    observation: Observation = field(default_factory=Observation)
    tokens_this_step: int = 0
    latency_this_step_seconds: float = 0.0
    signals: Optional[SignalEstimate] = None
    utilities: tuple[UtilityBreakdown, ...] = ()
    parse_ok: bool = True
    tool_invoked: bool = False

    @property
    def utility(self) -> Optional[UtilityBreakdown]:
        """Breakdown of the chosen action, when the step was policy-selected."""
        for u in self.utilities:
            if u.action_kind is self.action.kind:
                return u
        return None


class Status(str, Enum):
    RUNNING = "running"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class AgentState:
    query: str
    budget: Budget
    working_context: tuple[Evidence, ...] = ()
    history: tuple[TrajectoryStep, ...] = ()
    step_count: int = 0
    cumulative_tokens: int = 0
    cumulative_latency_seconds: float = 0.0
    consecutive_parse_failures: int = 0
    status: Status = Status.RUNNING
    draft_answer: Optional[str] = None

    def with_draft(self, draft: Optional[str]) -> AgentState:
        if not draft:
            return self
        return dataclasses.replace(self, draft_answer=draft)

    def terminated(self) -> AgentState:
        return dataclasses.replace(self, status=Status.TERMINATED)


class TerminationReason(str, Enum):
    STOP_ACTION = "stop_action"
    RESPONDED = "responded"
    STEP_BUDGET = "step_budget"
    TOKEN_BUDGET = "token_budget"
    FAILURE_FALLBACK = "failure_fallback"


@dataclass
class EpisodeResult:
    question_id: str
    final_answer: str
    termination_reason: TerminationReason
    total_tokens: int
    wall_seconds: float
    tool_calls: int
    redundant_tool_calls: int
    steps: list[TrajectoryStep]
    f1: Optional[float] = None
    strategy: str = ""
    error: Optional[str] = None

    def __post_init__(self) -> None:
        if self.redundant_tool_calls > self.tool_calls:
            raise InvalidInputError("redundant_tool_calls cannot exceed tool_calls")


def init_state(query: str, budget: Budget | None = None) -> AgentState:
    if not query or not query.strip():
        raise InvalidInputError("query must be non-empty")
    return AgentState(query=query, budget=budget or Budget())


def apply_step(
    state: AgentState, step: TrajectoryStep, snippet_chars: int = DEFAULT_SNIPPET_CHARS
) -> AgentState:
    if state.status is not Status.RUNNING:
        raise SequencingError("cannot apply a step to a terminated state")
    if step.index != state.step_count:
        raise SequencingError(f"expected step index {state.step_count}, got {step.index}")
    context = state.working_context
    if step.observation.content:
        context = context + (Evidence(step.observation.content[:snippet_chars], step.observation.source),)
    failures = 0 if step.parse_ok else state.consecutive_parse_failures + 1
    return dataclasses.replace(
        state,
        working_context=context,
        history=state.history + (step,),
        step_count=state.step_count + 1,
        cumulative_tokens=state.cumulative_tokens + step.tokens_this_step,
        cumulative_latency_seconds=state.cumulative_latency_seconds + step.latency_this_step_seconds,
        consecutive_parse_failures=failures,
    )


def should_terminate(state: AgentState, chosen: ActionKind | None) -> TerminationReason | None:
    """Return the reason to end the episode, or ``None`` to continue.

    Budget limits are checked before the chosen action so that a policy that
    never picks ``stop`` still ends within ``max_steps``.
    """
    budget = state.budget
    if state.step_count >= budget.max_steps:
        return TerminationReason.STEP_BUDGET
    if budget.max_total_tokens is not None and state.cumulative_tokens >= budget.max_total_tokens:
        return TerminationReason.TOKEN_BUDGET
    if state.consecutive_parse_failures >= budget.max_consecutive_parse_failures:
        return TerminationReason.FAILURE_FALLBACK
    if chosen is ActionKind.STOP:
        return TerminationReason.STOP_ACTION
    if chosen is ActionKind.RESPOND:
        return TerminationReason.RESPONDED
    return None


def count_tool_calls(steps: list[TrajectoryStep] | tuple[TrajectoryStep, ...]) -> int:
    return sum(1 for s in steps if s.tool_invoked)
