"""Datasets, per-method aggregation and the experiment grids.

A grid is a named list of :class:`MethodSpec` rows. :func:`run_grid` runs
every row over the same question sample and returns a report dictionary
whose ``rows`` mirror the columns of a results table (F1, tokens, wall time,
efficiency, tool calls, redundant tool calls).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Optional, Sequence

import numpy as np

from utilorch.backend import Backend
from utilorch.core import EpisodeResult, TrajectoryStep
from utilorch.metrics import (
    DEFAULT_EDGES,
    MetricError,
    bucket_continue_rate,
    efficiency,
    pearson,
)
from utilorch.orchestrators import Deps, Strategy, StrategyConfig, run_episode
from utilorch.redundancy import RedundancyMode
from utilorch.retriever import Bm25Index, Document, build_index
from utilorch.utility import AblationMask, CostMode

if TYPE_CHECKING:
    from utilorch.config import RunConfig

log = logging.getLogger(__name__)

GRIDS = ("main", "cost", "fairness", "redundancy", "signals", "ablation", "depth")
DEFAULT_DEPTH_STEPS = (1, 2, 3, 4, 6, 8)
WALL_FIELDS = frozenset({"wall_seconds", "mean_wall_seconds", "started_at", "finished_at", "elapsed_seconds"})

PAIRING_NOTE = (
    "per-episode mean of the best evidence-gathering expected_gain (and mean uncertainty) "
    "over policy steps, paired with that episode's final F1"
)


class DatasetError(ValueError):
    pass


class AggregationError(ValueError):
    pass


class GridError(ValueError):
    pass


# --- data ----------------------------------------------------------------------


@dataclass(frozen=True)
class QaExample:
    id: str
    question: str
    gold_answer: str
    context: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.gold_answer.strip():
            raise DatasetError(f"example {self.id!r}: question and answer must be non-empty")


def _parse_example(i: int, rec: Any) -> QaExample:
    if not isinstance(rec, dict):
        raise DatasetError(f"record {i} is not an object")
    try:
        context = tuple((str(title), tuple(str(s) for s in sents)) for title, sents in rec.get("context", []))
        return QaExample(str(rec["_id"]), str(rec["question"]), str(rec["answer"]), context)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"record {i} is malformed: {exc}") from exc


def load_dataset(path: str | os.PathLike, sample_size: Optional[int] = None, seed: int = 0) -> list[QaExample]:
    """Load a HotpotQA-format file and draw a seeded sample in original order."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DatasetError(f"dataset file not found: {path}") from exc
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot parse dataset {path}: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise DatasetError(f"{path}: expected a non-empty list of records")
    examples = [_parse_example(i, r) for i, r in enumerate(raw)]
    if sample_size is None:
        return examples
    if not 1 <= sample_size <= len(examples):
        raise DatasetError(f"sample_size {sample_size} outside 1..{len(examples)}")
    order = np.random.default_rng(seed).permutation(len(examples))
    return [examples[i] for i in sorted(order[:sample_size].tolist())]


def context_documents(examples: Sequence[QaExample]) -> list[Document]:
    """Context paragraphs as documents, one per distinct title (first wins)."""
    docs: dict[str, Document] = {}
    for ex in examples:
        for title, sentences in ex.context:
            if title not in docs:
                docs[title] = Document(title, title, " ".join(s.strip() for s in sentences))
    return list(docs.values())


# --- aggregation ---------------------------------------------------------------


@dataclass(frozen=True)
class MethodSummary:
    method: str
    mean_f1: Optional[float]
    mean_tokens: float
    mean_wall_seconds: float
    efficiency: Optional[float]
    mean_tool_calls: float
    mean_redundant_tool_calls: float
    episodes: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def aggregate(results: Sequence[EpisodeResult], method: str) -> MethodSummary:
    if not results:
        raise AggregationError(f"no episodes to aggregate for {method!r}")
    n = len(results)
    f1s = [r.f1 for r in results if r.f1 is not None]
    mean_f1 = sum(f1s) / len(f1s) if f1s else None
    mean_tokens = sum(r.total_tokens for r in results) / n
    eff = efficiency(mean_f1, mean_tokens) if mean_f1 is not None and mean_tokens > 0 else None
    return MethodSummary(
        method=method,
        mean_f1=mean_f1,
        mean_tokens=mean_tokens,
        mean_wall_seconds=sum(r.wall_seconds for r in results) / n,
        efficiency=eff,
        mean_tool_calls=sum(r.tool_calls for r in results) / n,
        mean_redundant_tool_calls=sum(r.redundant_tool_calls for r in results) / n,
        episodes=n,
    )


# --- signal analysis -------------------------------------------------------------


def _policy_steps(result: EpisodeResult) -> list[TrajectoryStep]:
    return [s for s in result.steps if s.signals is not None and s.utilities]


def continue_records(results: Sequence[EpisodeResult]) -> list[tuple[float, bool]]:
    """(expected gain, continued) per policy step; continuing = not respond/stop."""
    return [
        (s.signals.continue_gain, not s.action.kind.is_terminal)
        for r in results
        for s in _policy_steps(r)
    ]


def signal_analysis(results: Sequence[EpisodeResult], edges: Sequence[float] = DEFAULT_EDGES) -> dict:
    gains, uncs, f1s = [], [], []
    for r in results:
        steps = _policy_steps(r)
        if not steps or r.f1 is None:
            continue
        gains.append(sum(s.signals.continue_gain for s in steps) / len(steps))
        uncs.append(sum(s.signals.uncertainty for s in steps) / len(steps))
        f1s.append(r.f1)

    def _safe(x, y):
        try:
            return pearson(x, y)
        except MetricError:
            return None

    buckets = bucket_continue_rate(continue_records(results), edges)
    return {
        "pairing": PAIRING_NOTE,
        "episodes": len(f1s),
        "pearson_gain_f1": _safe(gains, f1s),
        "pearson_uncertainty_f1": _safe(uncs, f1s),
        "buckets": [dataclasses.asdict(b) for b in buckets],
    }


# --- grids -----------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    name: str
    config: StrategyConfig
    max_steps: Optional[int] = None


def _with(base: StrategyConfig, **kw) -> StrategyConfig:
    return dataclasses.replace(base, **kw)


def _policy(base: StrategyConfig, **kw) -> StrategyConfig:
    return _with(base, strategy=Strategy.POLICY, **kw)


def grid_methods(
    grid: str, base: StrategyConfig, depth_steps: Sequence[int] = DEFAULT_DEPTH_STEPS
) -> list[MethodSpec]:
    """Rows of a named experiment grid, derived from ``base``."""
    S = Strategy
    workflow_rows = [
        MethodSpec("workflow (minimal)", _with(base, strategy=S.WORKFLOW_MINIMAL)),
        MethodSpec("workflow-search-twice", _with(base, strategy=S.WORKFLOW_SEARCH_TWICE)),
        MethodSpec("workflow-search-verify", _with(base, strategy=S.WORKFLOW_SEARCH_VERIFY)),
    ]
    step_policy = MethodSpec("policy (step-cost)", _policy(base, cost_mode=CostMode.STEP))
    if grid == "main":
        return [
            MethodSpec("direct", _with(base, strategy=S.DIRECT)),
            *workflow_rows,
            MethodSpec("threshold", _with(base, strategy=S.THRESHOLD)),
            MethodSpec("react", _with(base, strategy=S.REACT)),
            step_policy,
        ]
    if grid == "cost":
        return [
            workflow_rows[0],
            MethodSpec("react", _with(base, strategy=S.REACT)),
            MethodSpec("threshold", _with(base, strategy=S.THRESHOLD)),
            step_policy,
            MethodSpec("policy (token-cost)", _policy(base, cost_mode=CostMode.TOKEN)),
            MethodSpec("policy (latency-cost)", _policy(base, cost_mode=CostMode.LATENCY)),
        ]
    if grid == "fairness":
        return workflow_rows
    if grid == "redundancy":
        semantic = base.redundancy_mode if base.redundancy_mode.threshold is not None else RedundancyMode.semantic()
        return [
            MethodSpec("policy (step_cost)", _policy(base, cost_mode=CostMode.STEP, redundancy_mode=RedundancyMode.exact())),
            MethodSpec("policy (semantic redundancy)", _policy(base, cost_mode=CostMode.STEP, redundancy_mode=semantic)),
        ]
    if grid == "signals":
        return [step_policy]
    if grid == "ablation":
        return [
            MethodSpec("full policy", _policy(base, mask=AblationMask())),
            MethodSpec("-expected-gain", _policy(base, mask=AblationMask(use_gain=False))),
            MethodSpec("-uncertainty", _policy(base, mask=AblationMask(use_uncertainty=False))),
            MethodSpec("-redundancy", _policy(base, mask=AblationMask(use_redundancy=False))),
            MethodSpec("-stop", _policy(base, mask=AblationMask(allow_stop=False))),
        ]
    if grid == "depth":
        if not depth_steps:
            raise GridError("depth grid needs at least one max_steps value")
        return [
            MethodSpec(
                f"policy (max_steps={n})",
                _policy(base, budget=dataclasses.replace(base.budget, max_steps=n)),
                max_steps=n,
            )
            for n in depth_steps
        ]
    raise GridError(f"unknown grid {grid!r}; expected one of {', '.join(GRIDS)}")


BackendFactory = Callable[[], Backend]
IndexProvider = Callable[[QaExample], Optional[Bm25Index]]


def shared_index(index: Bm25Index) -> IndexProvider:
    return lambda _ex: index


def per_question_index(ex: QaExample) -> Optional[Bm25Index]:
    docs = context_documents([ex])
    return build_index(docs) if docs else None


def run_method(
    spec: MethodSpec,
    examples: Sequence[QaExample],
    backend_factory: BackendFactory,
    index_for: IndexProvider,
    jobs: int = 1,
) -> list[EpisodeResult]:
    """Run one method over every example; each episode gets a fresh backend."""

    def one(ex: QaExample) -> EpisodeResult:
        deps = Deps(backend_factory(), index_for(ex))
        return run_episode(ex.question, ex.gold_answer, deps, spec.config, ex.id)

    if jobs <= 1:
        return [one(ex) for ex in examples]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, examples))


def run_grid(
    grid: str,
    examples: Sequence[QaExample],
    base: StrategyConfig,
    backend_factory: BackendFactory,
    index_for: IndexProvider,
    *,
    jobs: int = 1,
    depth_steps: Sequence[int] = DEFAULT_DEPTH_STEPS,
    bucket_edges: Sequence[float] = DEFAULT_EDGES,
) -> dict:
    methods = grid_methods(grid, base, depth_steps)
    if not examples:
        raise GridError("no examples to run")
    rows, episodes = [], {}
    for spec in methods:
        log.info("running %s on %d examples", spec.name, len(examples))
        results = run_method(spec, examples, backend_factory, index_for, jobs)
        row = aggregate(results, spec.name).to_dict()
        if spec.max_steps is not None:
            row["max_steps"] = spec.max_steps
        rows.append(row)
        episodes[spec.name] = [episode_to_dict(r) for r in results]
        if grid == "signals":
            signals = signal_analysis(results, bucket_edges)
    report = {"grid": grid, "sample_ids": [ex.id for ex in examples], "rows": rows}
    if grid == "signals":
        report["signals"] = signals
    report["episodes"] = episodes
    return report


# --- serialization -------------------------------------------------------------

REPORT_CONTENT_CHARS = 300


def _signals_dict(s) -> Optional[dict]:
    if s is None:
        return None
    return {
        "per_action_gain": {k.value: v for k, v in s.per_action_gain.items()},
        "uncertainty": s.uncertainty,
        "parse_ok": s.parse_ok,
        "proposals": {k.value: v for k, v in s.proposals.items()},
        "draft_answer": s.draft_answer,
    }


def step_to_dict(step: TrajectoryStep) -> dict:
    obs = step.observation
    return {
        "index": step.index,
        "action": {"kind": step.action.kind.value, "argument": step.action.argument},
        "observation": {
            "source": obs.source.value,
            "content": obs.content[:REPORT_CONTENT_CHARS],
            "token_count": obs.token_count,
            "latency_seconds": obs.latency_seconds,
        },
        "tokens": step.tokens_this_step,
        "latency_seconds": step.latency_this_step_seconds,
        "parse_ok": step.parse_ok,
        "tool_invoked": step.tool_invoked,
        "signals": _signals_dict(step.signals),
        "utilities": [
            {
                "action_kind": u.action_kind.value,
                "gain": u.gain,
                "cost": u.cost,
                "uncertainty": u.uncertainty,
                "redundancy": u.redundancy,
                "total": u.total,
            }
            for u in step.utilities
        ],
    }


def episode_to_dict(r: EpisodeResult) -> dict:
    return {
        "question_id": r.question_id,
        "strategy": r.strategy,
        "final_answer": r.final_answer,
        "f1": r.f1,
        "termination_reason": r.termination_reason.value,
        "total_tokens": r.total_tokens,
        "wall_seconds": r.wall_seconds,
        "tool_calls": r.tool_calls,
        "redundant_tool_calls": r.redundant_tool_calls,
        "error": r.error,
        "steps": [step_to_dict(s) for s in r.steps],
    }


def strip_wall_fields(obj: Any) -> Any:
    """Copy of a report with every wall-clock field removed."""
    if isinstance(obj, dict):
        return {k: strip_wall_fields(v) for k, v in obj.items() if k not in WALL_FIELDS}
    if isinstance(obj, list):
        return [strip_wall_fields(v) for v in obj]
    return obj


# --- full runs -------------------------------------------------------------------


def make_backend_factory(spec) -> BackendFactory:
    """Scripted runs get a fresh backend per episode; HTTP runs share one client."""
    from utilorch.backend import HttpBackend, ScriptedBackend, load_script

    if spec.kind == "scripted":
        entries = load_script(spec.script)
        return lambda: ScriptedBackend(entries)
    backend = HttpBackend.from_env(
        spec.endpoint,
        spec.model,
        spec.api_key_env,
        timeout_seconds=spec.timeout_seconds,
        max_in_flight=spec.max_in_flight,
    )
    return lambda: backend


def make_index_provider(mode: str, path: Optional[str], examples: Sequence[QaExample]) -> IndexProvider:
    from utilorch.retriever import load_corpus_dir

    if mode == "question-contexts":
        return per_question_index
    if mode == "dataset-contexts":
        return shared_index(build_index(context_documents(examples)))
    if mode == "directory":
        return shared_index(build_index(load_corpus_dir(path)))
    if mode == "index":
        return shared_index(Bm25Index.load(path))
    raise GridError(f"unknown corpus mode {mode!r}")


def run_experiment(grid: str, config: RunConfig) -> dict:
    """Run a named grid end to end and return the report dictionary.

    Dataset, corpus and backend are all prepared before the first episode, so
    configuration problems surface without any partial results.
    """
    from datetime import datetime, timezone

    from utilorch import __version__

    grid_methods(grid, config.strategy, config.depth_steps)
    examples = load_dataset(config.dataset, config.sample_size, config.seed)
    index_for = make_index_provider(config.corpus_mode, config.corpus_path, examples)
    backend_factory = make_backend_factory(config.backend)
    started = datetime.now(timezone.utc).isoformat()
    body = run_grid(
        grid,
        examples,
        config.strategy,
        backend_factory,
        index_for,
        jobs=config.jobs,
        depth_steps=config.depth_steps,
        bucket_edges=config.bucket_edges,
    )
    metadata = {
        "version": __version__,
        "grid": grid,
        "seed": config.seed,
        "sample_size": len(examples),
        "corpus_mode": config.corpus_mode,
        "retrieval_k": config.strategy.retrieval_k,
        "redundant_call_metric": "exact-match count over retrieve/tool_call steps",
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    if grid == "signals":
        metadata["signal_pairing"] = PAIRING_NOTE
    return {"metadata": metadata, "config": config.echo(), **body}


# --- report files ----------------------------------------------------------------

TABLE_COLUMNS = (
    ("Method", "method"),
    ("F1", "mean_f1"),
    ("Tokens", "mean_tokens"),
    ("Wall Time", "mean_wall_seconds"),
    ("Efficiency", "efficiency"),
    ("Tool Calls", "mean_tool_calls"),
    ("Redundant Tool Calls", "mean_redundant_tool_calls"),
    ("Episodes", "episodes"),
)


def _fmt(v: Any) -> Any:
    return "" if v is None else v


def write_csvs(report: dict, out_dir: str | os.PathLike) -> list[Path]:
    """Table and plot-data CSVs for a report; returns the files written."""
    import csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def dump(name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        path = out / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows([[_fmt(v) for v in r] for r in rows])
        written.append(path)

    rows = report["rows"]
    dump(f"table_{report['grid']}.csv", [c for c, _ in TABLE_COLUMNS], [[r.get(k) for _, k in TABLE_COLUMNS] for r in rows])
    dump(
        "pareto.csv",
        ["method", "mean_f1", "mean_tokens", "mean_wall"],
        [[r["method"], r["mean_f1"], r["mean_tokens"], r["mean_wall_seconds"]] for r in rows],
    )
    if "signals" in report:
        dump(
            "buckets.csv",
            ["bucket", "count", "continue_rate"],
            [
                [f"[{b['lower']:g}, {b['upper']:g}{']' if i == len(report['signals']['buckets']) - 1 else ')'}", b["count"], b["continue_rate"]]
                for i, b in enumerate(report["signals"]["buckets"])
            ],
        )
    if any("max_steps" in r for r in rows):
        dump(
            "depth.csv",
            ["max_steps", "f1", "tokens", "wall"],
            [[r["max_steps"], r["mean_f1"], r["mean_tokens"], r["mean_wall_seconds"]] for r in rows if "max_steps" in r],
        )
    return written


def write_report(report: dict, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def format_table(rows: Sequence[dict]) -> str:
    header = ["Method", "F1", "Tokens", "Wall", "Efficiency", "Tools", "Redundant"]
    lines = ["{:<30} {:>7} {:>9} {:>7} {:>11} {:>6} {:>9}".format(*header)]
    for r in rows:
        f1 = "-" if r["mean_f1"] is None else f"{r['mean_f1']:.4f}"
        eff = "-" if r["efficiency"] is None else f"{r['efficiency']:.3g}"
        lines.append(
            f"{r['method']:<30} {f1:>7} {r['mean_tokens']:>9.1f} {r['mean_wall_seconds']:>7.3f} "
            f"{eff:>11} {r['mean_tool_calls']:>6.2f} {r['mean_redundant_tool_calls']:>9.2f}"
        )
    return "\n".join(lines)
