"""Utility-guided orchestration of tool-using LLM agents, with baselines and an evaluation harness."""

from utilorch.backend import HttpBackend, ScriptEntry, ScriptedBackend, SignalEstimate, parse_signals
from utilorch.core import Action, ActionKind, AgentState, Budget, EpisodeResult, TerminationReason
from utilorch.orchestrators import Deps, Strategy, StrategyConfig, run_episode
from utilorch.retriever import Document, build_index, retrieve_top_k
from utilorch.utility import AblationMask, CostMode, UtilityWeights

__version__ = "0.1.0"

__all__ = [
    "AblationMask",
    "Action",
    "ActionKind",
    "AgentState",
    "Budget",
    "CostMode",
    "Deps",
    "Document",
    "EpisodeResult",
    "HttpBackend",
    "ScriptEntry",
    "ScriptedBackend",
    "SignalEstimate",
    "Strategy",
    "StrategyConfig",
    "TerminationReason",
    "UtilityWeights",
    "build_index",
    "parse_signals",
    "retrieve_top_k",
    "run_episode",
]
