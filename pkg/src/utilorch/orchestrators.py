"""Episode runners: the utility-guided policy and the comparison baselines.

All strategies share :func:`run_episode`, which dispatches on
``StrategyConfig.strategy`` and always returns an :class:`EpisodeResult`.
Backend failures never escape: they end the episode with reason
``failure_fallback`` and the best draft answer seen so far.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from utilorch import prompts
from utilorch.backend import (
    Backend,
    BackendError,
    BackendRequest,
    BackendResponse,
    SignalEstimate,
    estimate_tokens,
    parse_signals,
)
from utilorch.core import (
    DEFAULT_SNIPPET_CHARS,
    ACTION_ORDER,
    Action,
    ActionKind,
    AgentState,
    Budget,
    EpisodeResult,
    Observation,
    ObservationSource,
    TerminationReason,
    TrajectoryStep,
    apply_step,
    count_tool_calls,
    init_state,
    should_terminate,
)
from utilorch.metrics import f1_score
from utilorch.redundancy import RedundancyMode, count_redundant_calls, redundancy_score
from utilorch.retriever import Bm25Index, retrieve_top_k
from utilorch.utility import (
    AblationMask,
    CostMode,
    CostModelConfig,
    UtilityWeights,
    action_cost,
    compute_utility,
    select_action,
)

log = logging.getLogger(__name__)


class Strategy(str, Enum):
    POLICY = "policy"
    DIRECT = "direct"
    WORKFLOW_MINIMAL = "workflow_minimal"
    WORKFLOW_SEARCH_TWICE = "workflow_search_twice"
    WORKFLOW_SEARCH_VERIFY = "workflow_search_verify"
    THRESHOLD = "threshold"
    REACT = "react"


WORKFLOWS = (Strategy.WORKFLOW_MINIMAL, Strategy.WORKFLOW_SEARCH_TWICE, Strategy.WORKFLOW_SEARCH_VERIFY)


@dataclass(frozen=True)
class StrategyConfig:
    strategy: Strategy = Strategy.POLICY
    cost_mode: CostMode = CostMode.STEP
    redundancy_mode: RedundancyMode = field(default_factory=RedundancyMode.exact)
    weights: UtilityWeights = field(default_factory=UtilityWeights)
    mask: AblationMask = field(default_factory=AblationMask)
    budget: Budget = field(default_factory=Budget)
    cost_model: CostModelConfig = field(default_factory=CostModelConfig)
    threshold_tau: float = 0.5
    react_max_steps: int = 6
    retrieval_k: int = 3
    snippet_chars: int = DEFAULT_SNIPPET_CHARS
    max_output_tokens: int = 256
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold_tau <= 1.0:
            raise ValueError("threshold_tau must lie in [0, 1]")
        if self.react_max_steps < 1 or self.retrieval_k < 1 or self.snippet_chars < 1:
            raise ValueError("react_max_steps, retrieval_k and snippet_chars must be >= 1")

    def effective_budget(self) -> Budget:
        if self.strategy is Strategy.REACT:
            return dataclasses.replace(self.budget, max_steps=self.react_max_steps)
        return self.budget


@dataclass
class Deps:
    backend: Backend
    index: Optional[Bm25Index] = None


class _Episode:
    """Bookkeeping shared by every strategy for a single question."""

    def __init__(self, question: str, question_id: str, gold: Optional[str], deps: Deps, config: StrategyConfig):
        self.state: AgentState = init_state(question, config.effective_budget())
        self.question_id = question_id
        self.gold = gold
        self.deps = deps
        self.config = config
        self.answer: Optional[str] = None
        self._start = time.perf_counter()
        self._tokens = 0
        self._latency = 0.0

    # backend and tool access

    def call(self, request: BackendRequest) -> BackendResponse:
        resp = self.deps.backend.complete(request)
        self._tokens += resp.total_tokens
        self._latency += resp.latency_seconds
        return resp

    def control(self) -> SignalEstimate:
        c = self.config
        signals = parse_signals(self.call(prompts.control_request(self.state, c.max_output_tokens, c.temperature)).text)
        self.state = self.state.with_draft(signals.draft_answer)
        return signals

    def final_answer(self) -> str:
        c = self.config
        return prompts.clean_answer(
            self.call(prompts.answer_request(self.state, c.max_output_tokens, c.temperature)).text
        )

    def search(self, query: str, source: ObservationSource) -> Observation:
        if self.deps.index is None:
            raise RuntimeError(f"{self.config.strategy.value} needs a retrieval index")
        hits = retrieve_top_k(self.deps.index, query, self.config.retrieval_k)
        content = "\n\n".join(f"{h.doc_id}: {h.snippet}" for h in hits)
        if not content:
            content = f"No results for {query!r}."
        return Observation(source, content, estimate_tokens(content))

    def verify(self, claim: Optional[str]) -> Observation:
        c = self.config
        resp = self.call(prompts.verify_request(self.state, claim, c.max_output_tokens, c.temperature))
        revised = parse_signals(resp.text).draft_answer
        if revised is None:
            revised = prompts.clean_answer(resp.text) or None
        self.state = self.state.with_draft(revised)
        content = f"Checked answer: {revised}" if revised else "Verification gave no answer."
        return Observation(ObservationSource.VERIFICATION, content, estimate_tokens(content))

    # state transitions

    def commit(
        self,
        action: Action,
        observation: Observation | None = None,
        *,
        signals: SignalEstimate | None = None,
        utilities=(),
        parse_ok: bool = True,
        tool_invoked: bool | None = None,
    ) -> TrajectoryStep:
        step = TrajectoryStep(
            index=self.state.step_count,
            action=action,
            observation=observation or Observation(),
            tokens_this_step=self._tokens,
            latency_this_step_seconds=self._latency,
            signals=signals,
            utilities=tuple(utilities),
            parse_ok=parse_ok,
            tool_invoked=action.kind.is_external if tool_invoked is None else tool_invoked,
        )
        self._tokens = 0
        self._latency = 0.0
        self.state = apply_step(self.state, step, self.config.snippet_chars)
        return step

    def note_parse_failure(self) -> None:
        self.state = dataclasses.replace(
            self.state, consecutive_parse_failures=self.state.consecutive_parse_failures + 1
        )

    def forced_respond(self) -> None:
        """Fallback termination: answer now if the step budget still allows it."""
        history = self.state.history
        if self.answer is not None or self.state.step_count >= self.state.budget.max_steps:
            return
        if history and history[-1].action.kind.is_terminal:
            return
        try:
            self.answer = self.final_answer()
        except BackendError as exc:
            log.info("%s: forced respond failed: %s", self.question_id, exc)
            return
        self.commit(Action(ActionKind.RESPOND))

    def finish(self, reason: TerminationReason, error: Optional[str] = None) -> EpisodeResult:
        if reason is TerminationReason.FAILURE_FALLBACK and error is None:
            self.forced_respond()
        self.state = self.state.terminated()
        answer = self.answer if self.answer is not None else (self.state.draft_answer or "")
        steps = list(self.state.history)
        return EpisodeResult(
            question_id=self.question_id,
            final_answer=answer,
            termination_reason=reason,
            total_tokens=self.state.cumulative_tokens + self._tokens,
            wall_seconds=time.perf_counter() - self._start,
            tool_calls=count_tool_calls(steps),
            redundant_tool_calls=count_redundant_calls(steps, RedundancyMode.exact()),
            steps=steps,
            f1=f1_score(answer, self.gold).f1 if self.gold is not None else None,
            strategy=self.config.strategy.value,
            error=error,
        )

    def fail(self, exc: BackendError) -> EpisodeResult:
        log.info("%s: backend error, falling back: %s", self.question_id, exc)
        return self.finish(TerminationReason.FAILURE_FALLBACK, error=str(exc))

    def after(self, kind: ActionKind) -> Optional[EpisodeResult]:
        reason = should_terminate(self.state, kind)
        return None if reason is None else self.finish(reason)


# --- utility-guided policy -------------------------------------------------------


def candidate_actions(state: AgentState, signals: SignalEstimate, mask: AblationMask) -> list[Action]:
    """The concrete action for each kind the policy may pick at this step."""
    retrieve_q = signals.proposals.get(ActionKind.RETRIEVE) or state.query
    tool_q = signals.proposals.get(ActionKind.TOOL_CALL) or retrieve_q
    claim = signals.proposals.get(ActionKind.VERIFY) or state.draft_answer
    actions = {
        ActionKind.RESPOND: Action(ActionKind.RESPOND),
        ActionKind.RETRIEVE: Action(ActionKind.RETRIEVE, retrieve_q),
        ActionKind.TOOL_CALL: Action(ActionKind.TOOL_CALL, tool_q),
        ActionKind.VERIFY: Action(ActionKind.VERIFY, claim),
        ActionKind.STOP: Action(ActionKind.STOP),
    }
    return [actions[k] for k in ACTION_ORDER if mask.allow_stop or k is not ActionKind.STOP]


def score_candidates(ep_state: AgentState, candidates: list[Action], signals: SignalEstimate, config: StrategyConfig):
    return [
        compute_utility(
            a.kind,
            signals,
            action_cost(a.kind, ep_state, config.cost_mode, config.cost_model, ep_state.budget),
            redundancy_score(a, ep_state.history, config.redundancy_mode),
            config.weights,
            config.mask,
        )
        for a in candidates
    ]


def run_policy_episode(
    question: str, gold: Optional[str], deps: Deps, config: StrategyConfig, question_id: str = ""
) -> EpisodeResult:
    ep = _Episode(question, question_id, gold, deps, config)
    while True:
        try:
            signals = ep.control()
            candidates = candidate_actions(ep.state, signals, config.mask)
            utilities = score_candidates(ep.state, candidates, signals, config)
            kind = select_action(utilities, config.mask)
            action = next(a for a in candidates if a.kind is kind)
            observation = None
            if kind is ActionKind.RETRIEVE:
                observation = ep.search(action.argument, ObservationSource.RETRIEVAL)
            elif kind is ActionKind.TOOL_CALL:
                observation = ep.search(action.argument, ObservationSource.TOOL)
            elif kind is ActionKind.VERIFY:
                observation = ep.verify(action.argument)
            elif kind is ActionKind.RESPOND:
                ep.answer = ep.final_answer()
        except BackendError as exc:
            return ep.fail(exc)
        ep.commit(action, observation, signals=signals, utilities=utilities, parse_ok=signals.parse_ok)
        if (done := ep.after(kind)) is not None:
            return done


# --- baselines -----------------------------------------------------------------


def run_direct(question: str, gold: Optional[str], deps: Deps, config: StrategyConfig, question_id: str = "") -> EpisodeResult:
    ep = _Episode(question, question_id, gold, deps, config)
    try:
        resp = ep.call(prompts.direct_request(question, config.max_output_tokens, config.temperature))
    except BackendError as exc:
        return ep.fail(exc)
    ep.answer = prompts.clean_answer(resp.text)
    ep.commit(Action(ActionKind.RESPOND))
    return ep.after(ActionKind.RESPOND)


def run_workflow(question: str, gold: Optional[str], deps: Deps, config: StrategyConfig, question_id: str = "") -> EpisodeResult:
    """Fixed pipelines.

    minimal:        retrieve(question) -> respond
    search_twice:   retrieve(question) -> retrieve(reformulated query) -> respond
    search_verify:  retrieve(question) -> verify (draft + claim-check search) -> respond
    """
    if config.strategy not in WORKFLOWS:
        raise ValueError(f"{config.strategy} is not a workflow strategy")
    ep = _Episode(question, question_id, gold, deps, config)
    try:
        ep.commit(Action(ActionKind.RETRIEVE, question), ep.search(question, ObservationSource.RETRIEVAL))
        if (done := ep.after(ActionKind.RETRIEVE)) is not None:
            return done
        if config.strategy is Strategy.WORKFLOW_SEARCH_TWICE:
            resp = ep.call(prompts.reformulate_request(ep.state, config.max_output_tokens, config.temperature))
            query = prompts.clean_answer(resp.text) or question
            ep.commit(Action(ActionKind.RETRIEVE, query), ep.search(query, ObservationSource.RETRIEVAL))
            if (done := ep.after(ActionKind.RETRIEVE)) is not None:
                return done
        elif config.strategy is Strategy.WORKFLOW_SEARCH_VERIFY:
            checked = ep.verify(None)
            claim = ep.state.draft_answer
            evidence = ep.search(f"{question} {claim or ''}".strip(), ObservationSource.RETRIEVAL)
            obs = Observation(
                ObservationSource.VERIFICATION,
                f"{checked.content}\n\n{evidence.content}",
                checked.token_count + evidence.token_count,
            )
            ep.commit(Action(ActionKind.VERIFY, claim), obs, tool_invoked=True)
            if (done := ep.after(ActionKind.VERIFY)) is not None:
                return done
        ep.answer = ep.final_answer()
    except BackendError as exc:
        return ep.fail(exc)
    ep.commit(Action(ActionKind.RESPOND))
    return ep.after(ActionKind.RESPOND)


def run_threshold(question: str, gold: Optional[str], deps: Deps, config: StrategyConfig, question_id: str = "") -> EpisodeResult:
    """Retrieve while self-reported uncertainty exceeds ``threshold_tau``, then answer."""
    ep = _Episode(question, question_id, gold, deps, config)
    while True:
        try:
            signals = ep.control()
            if signals.uncertainty > config.threshold_tau:
                query = signals.proposals.get(ActionKind.RETRIEVE) or question
                action = Action(ActionKind.RETRIEVE, query)
                observation = ep.search(query, ObservationSource.RETRIEVAL)
            else:
                action = Action(ActionKind.RESPOND)
                observation = None
                ep.answer = ep.final_answer()
        except BackendError as exc:
            return ep.fail(exc)
        ep.commit(action, observation, signals=signals, parse_ok=signals.parse_ok)
        if (done := ep.after(action.kind)) is not None:
            return done


_INVALID_ACTION = "Observation: Invalid action. Use Search[query] or Finish[answer]."


def run_react(question: str, gold: Optional[str], deps: Deps, config: StrategyConfig, question_id: str = "") -> EpisodeResult:
    """Thought/Action/Observation loop with Search and Finish actions.

    A reply without a usable action line is not a step; it counts as a parse
    failure and the loop asks again, up to the fallback limit.
    """
    ep = _Episode(question, question_id, gold, deps, config)
    scratchpad: list[str] = []
    while True:
        try:
            resp = ep.call(prompts.react_request(question, scratchpad, config.max_output_tokens, config.temperature))
            parsed = prompts.parse_react_action(resp.text)
            if parsed is None:
                ep.note_parse_failure()
                scratchpad += [resp.text.strip(), _INVALID_ACTION]
                if (done := ep.after(None)) is not None:
                    return done
                continue
            verb, arg = parsed
            if verb == "finish":
                ep.answer = prompts.clean_answer(arg)
                ep.commit(Action(ActionKind.RESPOND))
                return ep.after(ActionKind.RESPOND)
            observation = ep.search(arg, ObservationSource.RETRIEVAL)
        except BackendError as exc:
            return ep.fail(exc)
        ep.commit(Action(ActionKind.RETRIEVE, arg), observation)
        scratchpad += [resp.text.strip(), f"Observation: {observation.content}"]
        if (done := ep.after(ActionKind.RETRIEVE)) is not None:
            return done


_RUNNERS = {
    Strategy.POLICY: run_policy_episode,
    Strategy.DIRECT: run_direct,
    Strategy.WORKFLOW_MINIMAL: run_workflow,
    Strategy.WORKFLOW_SEARCH_TWICE: run_workflow,
    Strategy.WORKFLOW_SEARCH_VERIFY: run_workflow,
    Strategy.THRESHOLD: run_threshold,
    Strategy.REACT: run_react,
}


def run_episode(
    question: str, gold: Optional[str], deps: Deps, config: StrategyConfig, question_id: str = ""
) -> EpisodeResult:
    return _RUNNERS[config.strategy](question, gold, deps, config, question_id)
