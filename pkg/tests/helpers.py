"""Builders shared across the test modules."""

from __future__ import annotations

import json

from utilorch.backend import ScriptEntry, ScriptedBackend
from utilorch.orchestrators import Deps
from utilorch.retriever import Document, build_index

KINDS = ("respond", "retrieve", "tool_call", "verify", "stop")


def control(gains, uncertainty, **extra) -> ScriptEntry:
    if isinstance(gains, dict):
        gains = dict(gains)
    body = {"expected_gain": gains, "uncertainty": uncertainty, **extra}
    return ScriptEntry(json.dumps(body), "control")


def tagged(tag: str, text: str) -> ScriptEntry:
    return ScriptEntry(text, tag)


TOY_DOCS = [
    Document("france", "France", "France is a country in Western Europe. Its capital is Paris."),
    Document("paris", "Paris", "Paris is the capital and largest city of France, on the Seine."),
    Document("berlin", "Berlin", "Berlin is the capital of Germany."),
]


def toy_index():
    return build_index(TOY_DOCS)


def deps(script) -> Deps:
    return Deps(ScriptedBackend(list(script)), toy_index())
