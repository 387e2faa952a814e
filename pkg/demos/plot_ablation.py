"""
Ablating utility terms
======================

Each ablation removes one term of the utility. Without the gain term every
action looks equally promising, and without ``stop`` the policy can only end
by answering or running out of budget.
"""

import json

from utilorch import ScriptEntry, ScriptedBackend, build_index
from utilorch.orchestrators import Deps, Strategy, StrategyConfig, run_episode
from utilorch.retriever import Document
from utilorch.utility import AblationMask

index = build_index([Document("paris", "Paris", "Paris is the capital of France.")])

# the model keeps proposing the same search with flat signals
control = json.dumps({"expected_gain": {"retrieve": 0.8, "respond": 0.3}, "uncertainty": 0.6,
                      "retrieve_query": "capital of France"})
script = [ScriptEntry(control, "control")] * 8 + [ScriptEntry("Paris", None)] * 8

masks = {
    "full policy": AblationMask(),
    "-expected-gain": AblationMask(use_gain=False),
    "-uncertainty": AblationMask(use_uncertainty=False),
    "-redundancy": AblationMask(use_redundancy=False),
    "-stop": AblationMask(allow_stop=False),
}
for name, mask in masks.items():
    cfg = StrategyConfig(Strategy.POLICY, mask=mask)
    r = run_episode("What is the capital of France?", "Paris", Deps(ScriptedBackend(script), index), cfg)
    kinds = " ".join(s.action.kind.value for s in r.steps)
    print(f"{name:<15} steps={len(r.steps)} redundant={r.redundant_tool_calls} [{kinds}]")
