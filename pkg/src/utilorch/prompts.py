"""Prompt construction for every backend call the strategies make.

Each builder returns a :class:`BackendRequest` carrying a ``tag`` so that a
scripted backend can serve role-specific entries.
"""

from __future__ import annotations

import re
from typing import Sequence

from utilorch.backend import BackendRequest, Message
from utilorch.core import AgentState

CONTROL = "control"
ANSWER = "answer"
VERIFY = "verify"
REFORMULATE = "reformulate"
REACT = "react"

CONTROL_SYSTEM = """You control a question-answering agent that can search a local document index.
Estimate how much each next action would improve the final answer and how unsure you are
that the current evidence is sufficient. Reply with one JSON object and nothing else:
{"expected_gain": {"respond": g, "retrieve": g, "tool_call": g, "verify": g, "stop": g},
 "uncertainty": u,
 "retrieve_query": "search query for more evidence",
 "tool_query": "a differently phrased search query",
 "verify_claim": "the claim to double-check",
 "draft_answer": "your best short answer so far"}
All g and u are numbers between 0 and 1."""

ANSWER_SYSTEM = (
    "Answer the question using the evidence. Reply with the answer only: "
    "a short phrase, no explanation."
)

VERIFY_SYSTEM = """Check the draft answer against the evidence and correct it if needed.
Reply with one JSON object:
{"expected_gain": g, "uncertainty": u, "draft_answer": "revised short answer"}"""

REFORMULATE_SYSTEM = (
    "Write one new search query that would find the missing evidence for the question. "
    "Reply with the query only."
)

REACT_SYSTEM = """Answer the question by interleaving Thought and Action lines.
Available actions:
  Search[query]  - search the document index
  Finish[answer] - give the final short answer
Reply with exactly one Thought line and one Action line."""


def format_evidence(state: AgentState, limit: int | None = None) -> str:
    items = state.working_context if limit is None else state.working_context[-limit:]
    if not items:
        return "(no evidence yet)"
    return "\n\n".join(f"[{i + 1}] {e.text}" for i, e in enumerate(items))


def format_history(state: AgentState) -> str:
    if not state.history:
        return "(none)"
    lines = []
    for s in state.history:
        arg = f" {s.action.argument!r}" if s.action.argument else ""
        lines.append(f"{s.index}. {s.action.kind.value}{arg}")
    return "\n".join(lines)


def _request(system: str, user: str, tag: str, max_tokens: int, temperature: float) -> BackendRequest:
    return BackendRequest(
        (Message("system", system), Message("user", user)), max_tokens, temperature, tag
    )


def control_request(state: AgentState, max_tokens: int = 256, temperature: float = 0.0) -> BackendRequest:
    user = (
        f"Question: {state.query}\n\n"
        f"Evidence:\n{format_evidence(state)}\n\n"
        f"Actions so far:\n{format_history(state)}\n\n"
        f"Current draft answer: {state.draft_answer or '(none)'}\n"
        f"Step {state.step_count + 1} of at most {state.budget.max_steps}."
    )
    return _request(CONTROL_SYSTEM, user, CONTROL, max_tokens, temperature)


def answer_request(state: AgentState, max_tokens: int = 64, temperature: float = 0.0) -> BackendRequest:
    user = f"Evidence:\n{format_evidence(state)}\n\nQuestion: {state.query}\nAnswer:"
    return _request(ANSWER_SYSTEM, user, ANSWER, max_tokens, temperature)


def direct_request(question: str, max_tokens: int = 64, temperature: float = 0.0) -> BackendRequest:
    return _request(ANSWER_SYSTEM, f"Question: {question}\nAnswer:", ANSWER, max_tokens, temperature)


def verify_request(
    state: AgentState, claim: str | None, max_tokens: int = 128, temperature: float = 0.0
) -> BackendRequest:
    user = (
        f"Question: {state.query}\n\n"
        f"Evidence:\n{format_evidence(state)}\n\n"
        f"Draft answer: {claim or '(none)'}"
    )
    return _request(VERIFY_SYSTEM, user, VERIFY, max_tokens, temperature)


def reformulate_request(state: AgentState, max_tokens: int = 48, temperature: float = 0.0) -> BackendRequest:
    user = f"Question: {state.query}\n\nEvidence so far:\n{format_evidence(state)}\n\nNew query:"
    return _request(REFORMULATE_SYSTEM, user, REFORMULATE, max_tokens, temperature)


def react_request(
    question: str, scratchpad: Sequence[str], max_tokens: int = 128, temperature: float = 0.0
) -> BackendRequest:
    user = f"Question: {question}\n" + "\n".join(scratchpad)
    return _request(REACT_SYSTEM, user, REACT, max_tokens, temperature)


_ACTION_LINE = re.compile(r"^\s*Action\s*(?:\d+)?\s*:\s*(Search|Finish)\s*\[(.*)\]\s*$", re.I | re.M)
_ANSWER_PREFIX = re.compile(r"^\s*(?:final\s+)?answer\s*:\s*", re.I)


def parse_react_action(text: str) -> tuple[str, str] | None:
    """Return ``("search", query)`` or ``("finish", answer)``; ``None`` if malformed."""
    m = _ACTION_LINE.search(text)
    if m is None:
        return None
    verb, arg = m.group(1).lower(), m.group(2).strip()
    if verb == "search" and not arg:
        return None
    return verb, arg


def clean_answer(text: str) -> str:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        return ""
    return _ANSWER_PREFIX.sub("", lines[0]).strip()
