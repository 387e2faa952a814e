import copy
import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from utilorch.backend import (
    BackendError,
    BackendRequest,
    ErrorCategory,
    HttpBackend,
    Message,
    ScriptEntry,
    ScriptedBackend,
    SignalEstimate,
    estimate_tokens,
    load_script,
    parse_signals,
)
from utilorch.core import ACTION_ORDER, ActionKind


def req(text="hi", tag=None):
    return BackendRequest((Message("user", text),), tag=tag)


def test_estimate_tokens():
    assert estimate_tokens("hello world") == 2
    assert estimate_tokens("") == 0
    assert estimate_tokens("  a   b  ") == 2


def test_scripted_examples():
    b = ScriptedBackend(["Paris"])
    r = b.complete(req("what is the capital"))
    assert r.text == "Paris" and r.completion_tokens == 1 and r.latency_seconds == 0.0
    assert r.prompt_tokens == 4
    with pytest.raises(BackendError) as exc:
        b.complete(req())
    assert exc.value.category is ErrorCategory.EXHAUSTED


def test_zero_messages_rejected():
    with pytest.raises(BackendError) as exc:
        ScriptedBackend(["x"]).complete(BackendRequest(()))
    assert exc.value.category is ErrorCategory.INVALID_REQUEST


def test_tag_matching_skips_other_roles():
    b = ScriptedBackend([ScriptEntry("c1", "control"), ScriptEntry("a1", "answer"), ScriptEntry("any")])
    assert b.complete(req(tag="answer")).text == "a1"
    assert b.complete(req(tag="control")).text == "c1"
    assert b.complete(req(tag="verify")).text == "any"
    assert b.remaining == 0


def test_scripted_is_deterministic_and_does_not_mutate():
    script = ["a b", "c", "d e f"]
    r = req("x y z")
    before = copy.deepcopy(r)
    runs = []
    for _ in range(2):
        b = ScriptedBackend(script)
        runs.append([b.complete(r) for _ in script])
    assert runs[0] == runs[1]
    assert r == before


def test_load_script_formats(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("- plain\n- {match: control, text: '{}'}\n", encoding="utf-8")
    assert load_script(p) == [ScriptEntry("plain"), ScriptEntry("{}", "control")]
    p.write_text(json.dumps({"entries": ["x"]}), encoding="utf-8")
    assert load_script(p) == [ScriptEntry("x")]
    p.write_text("- {match: control}\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_script(p)


# --- HTTP ------------------------------------------------------------------------


def http(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpBackend("http://test/v1", "m", api_key="k", client=client, backoff_seconds=0.0, **kw)


def ok_body(text="Paris", usage=True):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = {"prompt_tokens": 11, "completion_tokens": 3}
    return body


def test_http_reads_usage_and_sends_payload():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=ok_body())

    r = http(handler).complete(BackendRequest((Message("user", "q"),), max_output_tokens=7, temperature=0.3))
    assert (r.text, r.prompt_tokens, r.completion_tokens) == ("Paris", 11, 3)
    assert seen["url"] == "http://test/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    assert seen["body"]["max_tokens"] == 7 and seen["body"]["temperature"] == 0.3
    assert seen["body"]["messages"] == [{"role": "user", "content": "q"}]


def test_http_falls_back_to_estimates():
    r = http(lambda _: httpx.Response(200, json=ok_body("two words", usage=False))).complete(req("a b c"))
    assert (r.prompt_tokens, r.completion_tokens) == (3, 2)


def test_http_retries_once_on_transient_status():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) == 1 else httpx.Response(200, json=ok_body())

    assert http(handler).complete(req()).text == "Paris"
    assert len(calls) == 2


def test_http_gives_up_after_one_retry():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(500)

    with pytest.raises(BackendError) as exc:
        http(handler).complete(req())
    assert exc.value.category is ErrorCategory.STATUS and len(calls) == 2


def test_http_transport_error():
    def handler(request):
        raise httpx.ConnectError("refused")

    with pytest.raises(BackendError) as exc:
        http(handler).complete(req())
    assert exc.value.category is ErrorCategory.TRANSPORT


def test_http_no_retry_on_client_error():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401)

    with pytest.raises(BackendError):
        http(handler).complete(req())
    assert len(calls) == 1


def test_http_malformed_body():
    with pytest.raises(BackendError) as exc:
        http(lambda _: httpx.Response(200, json={"nope": 1})).complete(req())
    assert exc.value.category is ErrorCategory.MALFORMED
    with pytest.raises(BackendError):
        http(lambda _: httpx.Response(200, content=b"not json")).complete(req())


# --- signals ----------------------------------------------------------------------


def test_parse_signals_examples():
    s = parse_signals('{"expected_gain": 1.7, "uncertainty": -0.2}')
    assert all(v == 1.0 for v in s.per_action_gain.values()) and s.uncertainty == 0.0 and s.parse_ok
    s = parse_signals('{"expected_gain": 0.4, "uncertainty": 0.6}')
    assert all(v == 0.4 for v in s.per_action_gain.values()) and s.uncertainty == 0.6 and s.parse_ok
    s = parse_signals("no structured content here")
    assert all(v == 0.5 for v in s.per_action_gain.values()) and s.uncertainty == 0.5 and not s.parse_ok


def test_parse_signals_per_action_map_and_proposals():
    text = 'Reasoning first. {"bad": } then {"expected_gain": {"retrieve": 0.9, "RESPOND": 0.2, "dance": 1}, "uncertainty": 0.3, "retrieve_query": " capital of France ", "draft_answer": "Paris"}'
    s = parse_signals(text)
    assert s.parse_ok
    assert s.gain(ActionKind.RETRIEVE) == 0.9 and s.gain(ActionKind.RESPOND) == 0.2
    assert s.gain(ActionKind.STOP) == 0.0
    assert s.proposals == {ActionKind.RETRIEVE: "capital of France"}
    assert s.draft_answer == "Paris"
    assert s.continue_gain == 0.9


@pytest.mark.parametrize(
    "text",
    [
        '{"expected_gain": "high", "uncertainty": 0.1}',
        '{"expected_gain": true, "uncertainty": 0.1}',
        '{"expected_gain": 0.3}',
        '{"expected_gain": NaN, "uncertainty": 0.1}',
        "[0.3, 0.4]",
    ],
)
def test_parse_signals_rejects_unusable(text):
    assert not parse_signals(text).parse_ok


def test_parse_signals_takes_first_valid_block():
    s = parse_signals('{"uncertainty": 0.1} {"expected_gain": 0.2, "uncertainty": 0.3} {"expected_gain": 0.9, "uncertainty": 0.9}')
    assert s.uncertainty == 0.3


def test_signal_estimate_defaults():
    s = SignalEstimate()
    assert set(s.per_action_gain) == set(ACTION_ORDER)
    assert not s.parse_ok


json_values = st.recursive(
    st.none() | st.booleans() | st.floats(allow_nan=True, allow_infinity=True) | st.integers() | st.text(max_size=5),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.text(max_size=8), inner, max_size=3),
    max_leaves=8,
)


@given(st.text())
def test_parse_signals_bounded_on_any_text(text):
    s = parse_signals(text)
    assert all(0.0 <= v <= 1.0 for v in s.per_action_gain.values())
    assert 0.0 <= s.uncertainty <= 1.0


@given(json_values, json_values, st.dictionaries(st.sampled_from([k.value for k in ACTION_ORDER]), st.floats(allow_nan=False), max_size=5))
def test_parse_signals_bounded_on_structured_input(gain, unc, gain_map):
    for g in (gain, gain_map):
        s = parse_signals(json.dumps({"expected_gain": g, "uncertainty": unc}))
        assert all(0.0 <= v <= 1.0 for v in s.per_action_gain.values())
        assert 0.0 <= s.uncertainty <= 1.0
