"""
Comparing orchestration strategies
==================================

The main grid runs direct answering, three fixed workflows, a threshold
controller, ReAct and the step-cost policy over the same questions. With the
bundled demo script the numbers illustrate mechanics, not model quality.
"""

from utilorch.config import load_config
from utilorch.data import demo_script_path, fixture_path
from utilorch.harness import format_table, run_experiment

config = load_config(None, {"dataset": str(fixture_path()), "backend.script": str(demo_script_path())})
report = run_experiment("main", config)
print(format_table(report["rows"]))

###############################################################################
# Fixed pipelines pin their tool-call counts: 1, 2 and 2.

fair = run_experiment("fairness", config)
for row in fair["rows"]:
    print(f"{row['method']:<25} tool calls = {row['mean_tool_calls']:.1f}")

###############################################################################
# The cost grid swaps the cost proxy (steps, tokens, latency) under the policy.

cost = run_experiment("cost", config)
for row in cost["rows"][-3:]:
    print(f"{row['method']:<25} tokens = {row['mean_tokens']:.1f}")
