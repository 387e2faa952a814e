import dataclasses

import pytest

from helpers import control, deps, tagged
from utilorch.backend import ScriptEntry, ScriptedBackend
from utilorch.core import ActionKind, Budget, TerminationReason
from utilorch.orchestrators import Deps, Strategy, StrategyConfig, run_episode
from utilorch.redundancy import RedundancyMode
from utilorch.utility import AblationMask, UtilityWeights, recompute_total

R, RET, TOOL, VER, STOP = (ActionKind.RESPOND, ActionKind.RETRIEVE, ActionKind.TOOL_CALL, ActionKind.VERIFY, ActionKind.STOP)
Q = "What is the capital of France?"


def policy(**kw):
    kw.setdefault("weights", UtilityWeights(1, 1, 1))
    return StrategyConfig(Strategy.POLICY, **kw)


def kinds(result):
    return [s.action.kind for s in result.steps]


def two_step_script():
    return [
        control({"retrieve": 0.9, "respond": 0.2, "tool_call": 0.2, "verify": 0.2, "stop": 0.0}, 0.2, retrieve_query="capital France"),
        control({"respond": 0.9, "retrieve": 0.1, "tool_call": 0.1, "verify": 0.1, "stop": 0.0}, 0.2, retrieve_query="capital France"),
        tagged("answer", "Paris"),
    ]


def test_policy_two_step_example():
    res = run_episode(Q, "Paris", deps(two_step_script()), policy())
    assert kinds(res) == [RET, R]
    assert res.termination_reason is TerminationReason.RESPONDED
    assert res.final_answer == "Paris" and res.f1 == 1.0 and res.tool_calls == 1
    step0 = {b.action_kind: b.total for b in res.steps[0].utilities}
    assert step0 == pytest.approx({R: -0.1, RET: 0.65, TOOL: -0.1, VER: 0.0, STOP: -0.2})
    step1 = {b.action_kind: b.total for b in res.steps[1].utilities}
    assert step1[R] == pytest.approx(0.9 - 0.2 * 7 / 12 - 0.2)


def test_policy_ablated_runs_to_budget():
    # with the gain term neutralized, verify is the cheapest non-committing action
    script = [control(0.5, 0.5) for _ in range(10)] + [tagged("verify", "Paris")] * 10
    cfg = policy(mask=AblationMask(use_gain=False, allow_stop=False), budget=Budget(max_steps=4))
    res = run_episode(Q, None, deps(script), cfg)
    assert len(res.steps) == 4
    assert res.termination_reason is TerminationReason.STEP_BUDGET
    assert kinds(res) == [VER] * 4
    assert all(STOP not in {b.action_kind for b in s.utilities} for s in res.steps)


def test_policy_script_exhaustion_falls_back():
    res = run_episode(Q, None, deps([control({"retrieve": 0.9}, 0.5)]), policy())
    assert res.termination_reason is TerminationReason.FAILURE_FALLBACK
    assert res.error and kinds(res) == [RET]


def test_policy_stop_action():
    res = run_episode(Q, None, deps([control({"stop": 0.9}, 0.0, draft_answer="Paris")]), policy())
    assert kinds(res) == [STOP]
    assert res.termination_reason is TerminationReason.STOP_ACTION
    assert res.final_answer == "Paris"


def test_policy_verify_revises_draft():
    script = [
        control({"verify": 0.9}, 0.2, draft_answer="Lyon"),
        tagged("verify", '{"expected_gain": 0.5, "uncertainty": 0.1, "draft_answer": "Paris"}'),
        control({"stop": 0.9}, 0.0),
    ]
    res = run_episode(Q, "Paris", deps(script), policy())
    assert kinds(res) == [VER, STOP]
    assert res.final_answer == "Paris" and res.tool_calls == 0


def test_parse_failures_force_respond():
    # unparseable control output falls back to 0.5/0.5 signals, which pick verify
    script = [ScriptEntry("garbage", "control")] * 3 + [tagged("verify", "Lyon")] * 3 + [tagged("answer", "Paris")]
    cfg = policy(budget=Budget(max_steps=6, max_consecutive_parse_failures=3))
    res = run_episode(Q, None, deps(script), cfg)
    assert res.termination_reason is TerminationReason.FAILURE_FALLBACK
    assert not any(s.parse_ok for s in res.steps[:3])
    assert kinds(res) == [VER, VER, VER, R] and res.final_answer == "Paris"


@pytest.mark.parametrize("use_redundancy", [True, False])
def test_policy_breakdowns_recompute(use_redundancy):
    script = [control({"retrieve": 0.7, "tool_call": 0.6, "respond": 0.3}, 0.4, retrieve_query="paris") for _ in range(6)]
    cfg = policy(mask=AblationMask(use_redundancy=use_redundancy), weights=UtilityWeights(0.7, 1.1, 0.9))
    res = run_episode(Q, None, deps(script), cfg)
    for step in res.steps:
        for b in step.utilities:
            assert recompute_total(b, cfg.weights, cfg.mask) == b.total
        assert step.utility.total == max(b.total for b in step.utilities)


def test_redundancy_penalty_reduces_repeats():
    script = [control({"retrieve": 0.8, "respond": 0.3}, 0.6, retrieve_query="capital France") for _ in range(6)] + [tagged("answer", "Paris")]
    on = run_episode(Q, None, deps(script), policy())
    off = run_episode(Q, None, deps(script), policy(mask=AblationMask(use_redundancy=False)))
    assert on.redundant_tool_calls <= off.redundant_tool_calls
    assert on.redundant_tool_calls < off.redundant_tool_calls


def test_semantic_redundancy_mode_used():
    script = [
        control({"retrieve": 0.8}, 0.6, retrieve_query="capital of France"),
        control({"retrieve": 0.8, "tool_call": 0.75}, 0.6, retrieve_query="France capital of", tool_query="berlin germany"),
        control({"stop": 1.0}, 0.0),
    ]
    res = run_episode(Q, None, deps(script), policy(redundancy_mode=RedundancyMode.semantic()))
    assert kinds(res) == [RET, TOOL, STOP]


# --- baselines -------------------------------------------------------------------


def test_direct():
    d = deps(["Paris"])
    res = run_episode("capital of France?", "Paris", d, StrategyConfig(Strategy.DIRECT))
    assert res.final_answer == "Paris" and res.tool_calls == 0 and kinds(res) == [R]
    assert d.backend.calls == 1
    assert res.total_tokens == res.steps[0].tokens_this_step > 0
    bad = run_episode("q?", "Paris", deps([]), StrategyConfig(Strategy.DIRECT))
    assert bad.termination_reason is TerminationReason.FAILURE_FALLBACK and bad.final_answer == ""


@pytest.mark.parametrize(
    "strategy,script,expected,calls",
    [
        (Strategy.WORKFLOW_MINIMAL, ["Paris"], [RET, R], 1),
        (Strategy.WORKFLOW_SEARCH_TWICE, ["Paris capital city", "Paris"], [RET, RET, R], 2),
        (Strategy.WORKFLOW_SEARCH_VERIFY, ["Paris", "Paris"], [RET, VER, R], 2),
    ],
)
def test_workflows(strategy, script, expected, calls):
    res = run_episode(Q, "Paris", deps(script), StrategyConfig(strategy))
    assert kinds(res) == expected
    assert res.tool_calls == calls
    assert res.final_answer == "Paris"


def test_workflow_rejects_other_strategy():
    from utilorch.orchestrators import run_workflow

    with pytest.raises(ValueError):
        run_workflow(Q, None, deps([]), StrategyConfig(Strategy.DIRECT))


def test_threshold_examples():
    cfg = StrategyConfig(Strategy.THRESHOLD, threshold_tau=0.5)
    res = run_episode(Q, None, deps([control(0.5, 0.9), control(0.5, 0.3), tagged("answer", "Paris")]), cfg)
    assert kinds(res) == [RET, R] and res.tool_calls == 1
    res = run_episode(Q, None, deps([control(0.5, 0.2), tagged("answer", "Paris")]), cfg)
    assert kinds(res) == [R] and res.tool_calls == 0
    cfg = dataclasses.replace(cfg, budget=Budget(max_steps=4))
    res = run_episode(Q, None, deps([control(0.5, 0.9)] * 10), cfg)
    assert len(res.steps) == 4 and res.termination_reason is TerminationReason.STEP_BUDGET


def test_react_examples():
    cfg = StrategyConfig(Strategy.REACT)
    script = ["Thought: need info\nAction: Search[capital France]", "Thought: got it\nAction: Finish[Paris]"]
    res = run_episode(Q, "Paris", deps(script), cfg)
    assert res.tool_calls == 1 and res.final_answer == "Paris"
    res = run_episode(Q, "Paris", deps(["Action: Finish[Paris]"]), cfg)
    assert res.tool_calls == 0 and res.final_answer == "Paris"
    res = run_episode(Q, None, deps(["I am not sure."] * 3), cfg)
    assert res.termination_reason is TerminationReason.FAILURE_FALLBACK


def test_react_step_budget():
    cfg = StrategyConfig(Strategy.REACT, react_max_steps=2)
    res = run_episode(Q, None, deps(["Action: Search[paris]"] * 5), cfg)
    assert len(res.steps) == 2 and res.termination_reason is TerminationReason.STEP_BUDGET


def test_missing_index_is_an_error():
    with pytest.raises(RuntimeError):
        run_episode(Q, None, Deps(ScriptedBackend(["x"])), StrategyConfig(Strategy.WORKFLOW_MINIMAL))


def test_token_budget():
    cfg = policy(budget=Budget(max_steps=6, max_total_tokens=10))
    script = [control({"retrieve": 0.9}, 0.5, retrieve_query="paris")] * 6
    res = run_episode(Q, None, deps(script), cfg)
    assert res.termination_reason is TerminationReason.TOKEN_BUDGET and len(res.steps) == 1


def _strip(res):
    return dataclasses.replace(res, wall_seconds=0.0)


@pytest.mark.parametrize("strategy", list(Strategy))
def test_strategies_are_deterministic(strategy):
    script = [control({"retrieve": 0.6, "respond": 0.5}, 0.7, retrieve_query="france")] * 4
    script += ["Action: Search[france]", "Paris", "Action: Finish[Paris]", "Paris", "Paris", "Paris"]
    cfg = StrategyConfig(strategy, budget=Budget(max_steps=3))
    a = run_episode(Q, "Paris", deps(script), cfg)
    b = run_episode(Q, "Paris", deps(script), cfg)
    assert _strip(a) == _strip(b)
    assert len(a.steps) <= 3


def test_config_validation():
    with pytest.raises(ValueError):
        StrategyConfig(threshold_tau=1.5)
    with pytest.raises(ValueError):
        StrategyConfig(react_max_steps=0)
