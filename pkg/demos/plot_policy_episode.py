"""
Walking through one utility-guided episode
==========================================

A scripted backend stands in for the language model, so every number below is
reproducible. At each step the policy scores all five actions and takes the
highest utility: gain minus weighted cost, uncertainty and redundancy.
"""

import json

from utilorch import ScriptEntry, ScriptedBackend, build_index
from utilorch.orchestrators import Deps, Strategy, StrategyConfig, run_episode
from utilorch.retriever import Document
from utilorch.utility import UtilityWeights

docs = [
    Document("france", "France", "France is a country in Western Europe. Its capital is Paris."),
    Document("berlin", "Berlin", "Berlin is the capital of Germany."),
]
index = build_index(docs)

###############################################################################
# The control block the model would emit: per-action gains, an uncertainty
# and a proposed search query. First it wants evidence, then it is confident.


def control(gains, uncertainty, **extra):
    return ScriptEntry(json.dumps({"expected_gain": gains, "uncertainty": uncertainty, **extra}), "control")


script = [
    control({"retrieve": 0.9, "respond": 0.2, "tool_call": 0.2, "verify": 0.2, "stop": 0.0}, 0.2,
            retrieve_query="capital of France"),
    control({"respond": 0.9, "retrieve": 0.1, "tool_call": 0.1, "verify": 0.1, "stop": 0.0}, 0.2),
    ScriptEntry("Paris", "answer"),
]

config = StrategyConfig(Strategy.POLICY, weights=UtilityWeights(1.0, 1.0, 1.0))
result = run_episode("What is the capital of France?", "Paris", Deps(ScriptedBackend(script), index), config)

###############################################################################
# Every step keeps the full breakdown, so the choice can be audited.

for step in result.steps:
    print(f"step {step.index}: chose {step.action.kind.value}")
    for b in step.utilities:
        print(f"    {b.action_kind.value:<10} gain={b.gain:.2f} cost={b.cost:.3f} "
              f"unc={b.uncertainty:.2f} red={b.redundancy:.0f} -> U={b.total:+.3f}")

print("answer:", result.final_answer, "| F1:", result.f1, "| reason:", result.termination_reason.value)
print("tokens:", result.total_tokens, "| tool calls:", result.tool_calls)
