"""Language-model backends and control-signal extraction.

Two backends share one ``complete(request) -> BackendResponse`` contract:

* :class:`ScriptedBackend` replays a fixed list of responses and is what the
  tests and the offline experiment runs use.
* :class:`HttpBackend` talks to any OpenAI-compatible chat-completions
  endpoint and reads token usage from the response body.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol, Sequence

import httpx
import yaml

from utilorch.core import ACTION_ORDER, ActionKind

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
DEFAULT_SIGNAL = 0.5


class ErrorCategory(str, Enum):
    INVALID_REQUEST = "invalid_request"
    TRANSPORT = "transport"
    STATUS = "status"
    MALFORMED = "malformed"
    EXHAUSTED = "exhausted"


class BackendError(RuntimeError):
    def __init__(self, category: ErrorCategory, message: str):
        super().__init__(f"{category.value}: {message}")
        self.category = category


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class BackendRequest:
    """A chat request. ``tag`` tells a scripted backend which entry to serve."""

    messages: tuple[Message, ...]
    max_output_tokens: int = 256
    temperature: float = 0.0
    tag: Optional[str] = None

    def validate(self) -> None:
        if not self.messages:
            raise BackendError(ErrorCategory.INVALID_REQUEST, "request has no messages")
        for m in self.messages:
            if m.role not in ROLES:
                raise BackendError(ErrorCategory.INVALID_REQUEST, f"unknown role {m.role!r}")
        if self.max_output_tokens < 1 or self.temperature < 0:
            raise BackendError(ErrorCategory.INVALID_REQUEST, "bad sampling parameters")


@dataclass(frozen=True)
class BackendResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_seconds: float = 0.0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


class Backend(Protocol):
    def complete(self, request: BackendRequest) -> BackendResponse: ...


def estimate_tokens(text: str) -> int:
    return len(text.split())


# --- scripted backend -------------------------------------------------------


@dataclass(frozen=True)
class ScriptEntry:
    text: str
    match: Optional[str] = None


def load_script(path: str | os.PathLike) -> list[ScriptEntry]:
    """Read a script file: a JSON/YAML list of ``{match, text}`` entries.

    Bare strings are accepted as untagged entries, and the list may also sit
    under a top-level ``entries`` key.
    """
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if isinstance(raw, dict):
        raw = raw.get("entries")
    if not isinstance(raw, list):
        raise ValueError(f"{path}: script must be a list of entries")
    return parse_script(raw)


def parse_script(raw: Sequence[Any]) -> list[ScriptEntry]:
    entries = []
    for i, item in enumerate(raw):
        if isinstance(item, str):
            entries.append(ScriptEntry(item))
        elif isinstance(item, Mapping) and isinstance(item.get("text"), str):
            entries.append(ScriptEntry(item["text"], item.get("match")))
        else:
            raise ValueError(f"script entry {i} must be a string or a mapping with 'text'")
    return entries


class ScriptedBackend:
    """Replays script entries in order.

    A request is served by the first unconsumed entry whose ``match`` is
    either empty or equal to the request tag. Usage is reported as whitespace
    token estimates of the prompt and the reply; latency is always 0.
    """

    def __init__(self, script: Sequence[ScriptEntry | str]):
        self._entries = [ScriptEntry(e) if isinstance(e, str) else e for e in script]
        self._used = [False] * len(self._entries)
        self.calls = 0

    def complete(self, request: BackendRequest) -> BackendResponse:
        request.validate()
        for i, entry in enumerate(self._entries):
            if self._used[i]:
                continue
            if entry.match is None or entry.match == request.tag:
                self._used[i] = True
                self.calls += 1
                prompt = sum(estimate_tokens(m.content) for m in request.messages)
                return BackendResponse(entry.text, prompt, estimate_tokens(entry.text), 0.0)
        raise BackendError(ErrorCategory.EXHAUSTED, f"no script entry left for tag {request.tag!r}")

    @property
    def remaining(self) -> int:
        return self._used.count(False)


# --- HTTP backend -------------------------------------------------------------

_TRANSIENT_STATUS = {408, 409, 429, 500, 502, 503, 504}


class HttpBackend:
    """OpenAI-compatible chat-completions client.

    One retry with exponential backoff on transport errors and transient
    status codes; anything else surfaces as :class:`BackendError`.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        timeout_seconds: float = 60.0,
        max_in_flight: int = 4,
        backoff_seconds: float = 1.0,
        client: Optional[httpx.Client] = None,
    ):
        url = endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        self.url = url
        self.model = model
        self.backoff_seconds = backoff_seconds
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout_seconds)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_env(cls, endpoint: str, model: str, api_key_env: str = "OPENAI_API_KEY", **kw) -> HttpBackend:
        return cls(endpoint, model, api_key=os.environ.get(api_key_env), **kw)

    def complete(self, request: BackendRequest) -> BackendResponse:
        request.validate()
        payload = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        with self._slots:
            start = time.perf_counter()
            resp = self._post_with_retry(payload)
            latency = time.perf_counter() - start
        return self._parse(resp, request, latency)

    def _post_with_retry(self, payload: dict) -> httpx.Response:
        for attempt in range(2):
            try:
                resp = self._client.post(self.url, json=payload, headers=self._headers)
            except httpx.TransportError as exc:
                if attempt == 0:
                    log.warning("transport error, retrying: %s", exc)
                    time.sleep(self.backoff_seconds * 2**attempt)
                    continue
                raise BackendError(ErrorCategory.TRANSPORT, str(exc)) from exc
            if resp.status_code in _TRANSIENT_STATUS and attempt == 0:
                log.warning("status %d, retrying", resp.status_code)
                time.sleep(self.backoff_seconds * 2**attempt)
                continue
            if not resp.is_success:
                raise BackendError(ErrorCategory.STATUS, f"HTTP {resp.status_code}")
            return resp
        raise AssertionError("unreachable")

    @staticmethod
    def _parse(resp: httpx.Response, request: BackendRequest, latency: float) -> BackendResponse:
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(ErrorCategory.MALFORMED, f"unexpected response body: {exc}") from exc
        if not isinstance(text, str):
            text = "" if text is None else str(text)
        usage = body.get("usage") or {}
        prompt = usage.get("prompt_tokens")
        completion = usage.get("completion_tokens")
        if not isinstance(prompt, int):
            prompt = sum(estimate_tokens(m.content) for m in request.messages)
        if not isinstance(completion, int):
            completion = estimate_tokens(text)
        return BackendResponse(text, prompt, completion, latency)


# --- control signals ----------------------------------------------------------


@dataclass(frozen=True)
class SignalEstimate:
    """Self-estimated control signals from one control call.

    Gains and uncertainty are clipped into [0, 1] on construction.
    ``proposals`` carries the model's suggested argument per action kind and
    ``draft_answer`` its current best answer, when it gave them.
    """

    per_action_gain: Mapping[ActionKind, float] = field(
        default_factory=lambda: {k: DEFAULT_SIGNAL for k in ACTION_ORDER}
    )
    uncertainty: float = DEFAULT_SIGNAL
    parse_ok: bool = False
    proposals: Mapping[ActionKind, str] = field(default_factory=dict)
    draft_answer: Optional[str] = None

    def __post_init__(self) -> None:
        gains = {k: _clip(self.per_action_gain.get(k, 0.0)) for k in ACTION_ORDER}
        object.__setattr__(self, "per_action_gain", gains)
        object.__setattr__(self, "uncertainty", _clip(self.uncertainty))

    def gain(self, kind: ActionKind) -> float:
        return self.per_action_gain[kind]

    @property
    def continue_gain(self) -> float:
        """Best gain among the evidence-gathering actions."""
        return max(self.per_action_gain[k] for k in ACTION_ORDER if not k.is_terminal)


def _clip(x: float) -> float:
    return min(1.0, max(0.0, float(x)))


def _number(x: Any) -> float:
    if isinstance(x, bool):
        raise ValueError("boolean is not a signal value")
    v = float(x)
    if not math.isfinite(v):
        raise ValueError("non-finite signal value")
    return v


def _json_objects(text: str):
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            yield obj
        pos = text.find("{", pos + 1)


_PROPOSAL_KEYS = {
    ActionKind.RETRIEVE: "retrieve_query",
    ActionKind.TOOL_CALL: "tool_query",
    ActionKind.VERIFY: "verify_claim",
}


def parse_signals(text: str) -> SignalEstimate:
    """Extract the first well-formed control block from ``text``.

    The block is a JSON object with ``expected_gain`` (a number, or a map from
    action name to number) and ``uncertainty``. A scalar gain applies to every
    action; action names missing from a map get gain 0. Optional keys
    ``retrieve_query``, ``tool_query``, ``verify_claim`` and ``draft_answer``
    are carried along. Anything unusable yields the 0.5/0.5 defaults with
    ``parse_ok=False``.
    """
    for obj in _json_objects(text):
        if "expected_gain" not in obj or "uncertainty" not in obj:
            continue
        try:
            uncertainty = _number(obj["uncertainty"])
            raw_gain = obj["expected_gain"]
            if isinstance(raw_gain, dict):
                gains = {}
                for name, value in raw_gain.items():
                    try:
                        kind = ActionKind(str(name).lower())
                    except ValueError:
                        continue
                    gains[kind] = _number(value)
            else:
                g = _number(raw_gain)
                gains = {k: g for k in ACTION_ORDER}
        except (TypeError, ValueError):
            continue
        proposals = {
            kind: obj[key].strip()
            for kind, key in _PROPOSAL_KEYS.items()
            if isinstance(obj.get(key), str) and obj[key].strip()
        }
        draft = obj.get("draft_answer")
        draft = draft.strip() if isinstance(draft, str) and draft.strip() else None
        return SignalEstimate(gains, uncertainty, True, proposals, draft)
    return SignalEstimate()
