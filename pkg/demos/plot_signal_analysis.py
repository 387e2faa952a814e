"""
Do the self-reported signals track quality?
===========================================

The signals grid pairs each episode's mean continue-gain and mean
uncertainty with its final F1, and buckets policy steps by gain to see how
often the policy chose to keep gathering evidence.
"""

from utilorch.config import load_config
from utilorch.data import demo_script_path, fixture_path
from utilorch.harness import run_experiment

config = load_config(None, {"dataset": str(fixture_path()), "backend.script": str(demo_script_path())})
signals = run_experiment("signals", config)["signals"]

print("pairing:", signals["pairing"])
print("episodes:", signals["episodes"])
# constant scripted signals have zero variance, so the correlation is undefined
print("pearson(gain, F1):", signals["pearson_gain_f1"])
print("pearson(uncertainty, F1):", signals["pearson_uncertainty_f1"])
for b in signals["buckets"]:
    print(f"gain in [{b['lower']:.2f}, {b['upper']:.2f}]: n={b['count']} continue rate={b['continue_rate']}")
