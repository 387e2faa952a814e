"""Run configuration: YAML file + dotted ``key=value`` overrides + defaults.

Precedence is override > file > built-in default, field by field. The merged
tree is validated into a :class:`RunConfig`; every error names the offending
field.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import yaml

from utilorch.core import Budget, InvalidInputError
from utilorch.harness import DEFAULT_DEPTH_STEPS, GRIDS
from utilorch.metrics import DEFAULT_EDGES
from utilorch.orchestrators import Strategy, StrategyConfig
from utilorch.redundancy import RedundancyMode
from utilorch.utility import AblationMask, CostMode, CostModelConfig, UtilityWeights

CORPUS_MODES = ("dataset-contexts", "question-contexts", "directory", "index")
BACKEND_KINDS = ("scripted", "http")
SECRET_KEYS = frozenset({"api_key", "key", "secret", "password", "authorization"})

DEFAULTS: dict[str, Any] = {
    "dataset": None,
    "sample_size": None,
    "seed": 0,
    "grid": "main",
    "output_dir": "runs",
    "jobs": 1,
    "corpus": {"mode": "dataset-contexts", "path": None},
    "backend": {
        "kind": "scripted",
        "script": None,
        "endpoint": None,
        "model": None,
        "api_key_env": "OPENAI_API_KEY",
        "max_in_flight": 4,
        "timeout_seconds": 60.0,
    },
    "strategy": {
        "cost_mode": "step",
        "redundancy_mode": "exact",
        "redundancy_threshold": 0.8,
        "weights": {"lambda1": 1.0, "lambda2": 1.0, "lambda3": 1.0},
        "mask": {"use_gain": True, "use_uncertainty": True, "use_redundancy": True, "allow_stop": True},
        "budget": {"max_steps": 6, "max_total_tokens": None, "max_consecutive_parse_failures": 3},
        "threshold_tau": 0.5,
        "react_max_steps": 6,
        "retrieval_k": 3,
        "snippet_chars": 1500,
        "max_output_tokens": 256,
        "temperature": 0.0,
        "cost_model": {
            "base_step_cost": {"respond": 0.2, "retrieve": 0.5, "tool_call": 0.6, "verify": 0.4, "stop": 0.0},
            "token_prior": {"respond": 150, "retrieve": 250, "tool_call": 250, "verify": 200, "stop": 0},
            "latency_prior_seconds": {"respond": 0.4, "retrieve": 0.6, "tool_call": 0.6, "verify": 0.5, "stop": 0.0},
            "token_normalizer": 1000,
            "latency_normalizer_seconds": 2.0,
            "latency_ewma_alpha": 0.5,
        },
    },
    "depth_steps": list(DEFAULT_DEPTH_STEPS),
    "bucket_edges": list(DEFAULT_EDGES),
}

# Subtrees whose keys are free-form (action names), not schema fields.
_OPEN_TABLES = {"base_step_cost", "token_prior", "latency_prior_seconds"}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


def _merge(base: dict, update: Mapping, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict) and key not in _OPEN_TABLES:
            if not isinstance(value, Mapping):
                raise ConfigError(path, "expected a mapping")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(item: str) -> tuple[str, Any]:
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(item, "override must look like key=value")
    return key.strip(), yaml.safe_load(raw) if raw.strip() else None


def apply_overrides(tree: dict, overrides: Sequence[str] | Mapping[str, Any]) -> dict:
    pairs = overrides.items() if isinstance(overrides, Mapping) else map(parse_override, overrides)
    out = copy.deepcopy(tree)
    for key, value in pairs:
        node = out
        parts = key.split(".")
        for i, part in enumerate(parts[:-1]):
            if not isinstance(node.get(part), dict):
                raise ConfigError(".".join(parts[: i + 1]), "unknown key")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(key, "unknown key")
        node[parts[-1]] = value
    return out


def load_tree(path: str | os.PathLike | None, overrides: Sequence[str] | Mapping[str, Any] = ()) -> dict:
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError("config", f"file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
        if raw is not None:
            if not isinstance(raw, Mapping):
                raise ConfigError("config", "top level must be a mapping")
            tree = _merge(tree, raw)
            _resolve_paths(tree, raw, Path(path).parent)
    return apply_overrides(tree, overrides)


_PATH_FIELDS = (("dataset",), ("backend", "script"), ("corpus", "path"))


def _resolve_paths(tree: dict, raw: Mapping, base: Path) -> None:
    """Relative paths written in a config file are relative to that file."""
    for keys in _PATH_FIELDS:
        src, dst = raw, tree
        for k in keys[:-1]:
            src = src.get(k) if isinstance(src, Mapping) else None
            dst = dst[k]
        value = src.get(keys[-1]) if isinstance(src, Mapping) else None
        if isinstance(value, str) and value and not Path(value).is_absolute():
            dst[keys[-1]] = str(base / value)


def redact(tree: Any) -> Any:
    if isinstance(tree, dict):
        return {k: ("<redacted>" if k.lower() in SECRET_KEYS else redact(v)) for k, v in tree.items()}
    if isinstance(tree, list):
        return [redact(v) for v in tree]
    return tree


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    script: Optional[str] = None
    endpoint: Optional[str] = None
    model: Optional[str] = None
    api_key_env: str = "OPENAI_API_KEY"
    max_in_flight: int = 4
    timeout_seconds: float = 60.0


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    sample_size: Optional[int]
    seed: int
    grid: str
    output_dir: str
    jobs: int
    corpus_mode: str
    corpus_path: Optional[str]
    backend: BackendSpec
    strategy: StrategyConfig
    depth_steps: tuple[int, ...]
    bucket_edges: tuple[float, ...]
    tree: dict

    def echo(self) -> dict:
        """The effective configuration as written into reports."""
        return redact(self.tree)


def _int(tree: Mapping, key: str, path: str, minimum: int | None = None, optional: bool = False) -> Optional[int]:
    v = tree.get(key)
    if v is None and optional:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return v


def _num(tree: Mapping, key: str, path: str) -> float:
    v = tree.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    return float(v)


def _choice(tree: Mapping, key: str, path: str, options: Sequence[str]) -> str:
    v = tree.get(key)
    if v not in options:
        raise ConfigError(path, f"expected one of {', '.join(options)}, got {v!r}")
    return v


def _strategy(t: Mapping) -> StrategyConfig:
    p = "strategy."
    try:
        cost_mode = CostMode(_choice(t, "cost_mode", p + "cost_mode", [m.value for m in CostMode]))
        kind = _choice(t, "redundancy_mode", p + "redundancy_mode", ["exact", "semantic"])
        redundancy = (
            RedundancyMode.exact()
            if kind == "exact"
            else RedundancyMode.semantic(_num(t, "redundancy_threshold", p + "redundancy_threshold"))
        )
        w = t["weights"]
        weights = UtilityWeights(*(_num(w, k, f"{p}weights.{k}") for k in ("lambda1", "lambda2", "lambda3")))
        m = t["mask"]
        for k, v in m.items():
            if not isinstance(v, bool):
                raise ConfigError(f"{p}mask.{k}", "expected true/false")
        mask = AblationMask(**m)
        b = t["budget"]
        budget = Budget(
            _int(b, "max_steps", p + "budget.max_steps", 1),
            _int(b, "max_total_tokens", p + "budget.max_total_tokens", 1, optional=True),
            _int(b, "max_consecutive_parse_failures", p + "budget.max_consecutive_parse_failures", 1),
        )
        tau = _num(t, "threshold_tau", p + "threshold_tau")
        if not 0.0 <= tau <= 1.0:
            raise ConfigError(p + "threshold_tau", "must lie in [0, 1]")
        c = t["cost_model"]
        cost_model = CostModelConfig(
            base_step_cost=c["base_step_cost"],
            token_prior=c["token_prior"],
            latency_prior_seconds=c["latency_prior_seconds"],
            token_normalizer=_int(c, "token_normalizer", p + "cost_model.token_normalizer", 1),
            latency_normalizer_seconds=_num(c, "latency_normalizer_seconds", p + "cost_model.latency_normalizer_seconds"),
            latency_ewma_alpha=_num(c, "latency_ewma_alpha", p + "cost_model.latency_ewma_alpha"),
        )
        return StrategyConfig(
            strategy=Strategy.POLICY,
            cost_mode=cost_mode,
            redundancy_mode=redundancy,
            weights=weights,
            mask=mask,
            budget=budget,
            cost_model=cost_model,
            threshold_tau=tau,
            react_max_steps=_int(t, "react_max_steps", p + "react_max_steps", 1),
            retrieval_k=_int(t, "retrieval_k", p + "retrieval_k", 1),
            snippet_chars=_int(t, "snippet_chars", p + "snippet_chars", 1),
            max_output_tokens=_int(t, "max_output_tokens", p + "max_output_tokens", 1),
            temperature=_num(t, "temperature", p + "temperature"),
        )
    except ConfigError:
        raise
    except (InvalidInputError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError("strategy", str(exc)) from exc


def validate(tree: dict) -> RunConfig:
    dataset = tree.get("dataset")
    if not dataset:
        raise ConfigError("dataset", "a dataset path is required")
    if not Path(dataset).is_file():
        raise ConfigError("dataset", f"file not found: {dataset}")
    grid = _choice(tree, "grid", "grid", GRIDS)

    corpus = tree["corpus"]
    mode = _choice(corpus, "mode", "corpus.mode", CORPUS_MODES)
    corpus_path = corpus.get("path")
    if mode in ("directory", "index"):
        if not corpus_path or not Path(corpus_path).exists():
            raise ConfigError("corpus.path", f"corpus mode {mode!r} needs an existing path")

    b = tree["backend"]
    kind = _choice(b, "kind", "backend.kind", BACKEND_KINDS)
    if kind == "scripted":
        if not b.get("script") or not Path(b["script"]).is_file():
            raise ConfigError("backend.script", "scripted backend needs an existing script file")
        if b.get("endpoint"):
            raise ConfigError("backend.endpoint", "set either a script or an endpoint, not both")
    else:
        if not b.get("endpoint"):
            raise ConfigError("backend.endpoint", "http backend needs an endpoint")
        if not b.get("model"):
            raise ConfigError("backend.model", "http backend needs a model name")
        if b.get("script"):
            raise ConfigError("backend.script", "set either a script or an endpoint, not both")
    backend = BackendSpec(
        kind,
        b.get("script"),
        b.get("endpoint"),
        b.get("model"),
        str(b.get("api_key_env") or "OPENAI_API_KEY"),
        _int(b, "max_in_flight", "backend.max_in_flight", 1),
        _num(b, "timeout_seconds", "backend.timeout_seconds"),
    )

    depth = tree.get("depth_steps") or []
    if not isinstance(depth, list) or any(isinstance(d, bool) or not isinstance(d, int) or d < 1 for d in depth):
        raise ConfigError("depth_steps", "expected a list of positive integers")
    edges = tree.get("bucket_edges")
    if not isinstance(edges, list) or len(edges) < 2 or edges[0] != 0 or edges[-1] != 1 or any(
        b2 <= a for a, b2 in zip(edges, edges[1:])
    ):
        raise ConfigError("bucket_edges", "expected strictly ascending edges from 0 to 1")

    return RunConfig(
        dataset=str(dataset),
        sample_size=_int(tree, "sample_size", "sample_size", 1, optional=True),
        seed=_int(tree, "seed", "seed"),
        grid=grid,
        output_dir=str(tree.get("output_dir") or "runs"),
        jobs=_int(tree, "jobs", "jobs", 1),
        corpus_mode=mode,
        corpus_path=corpus_path,
        backend=backend,
        strategy=_strategy(tree["strategy"]),
        depth_steps=tuple(depth),
        bucket_edges=tuple(float(e) for e in edges),
        tree=tree,
    )


def load_config(path: str | os.PathLike | None, overrides: Sequence[str] | Mapping[str, Any] = ()) -> RunConfig:
    return validate(load_tree(path, overrides))
