"""Command-line entry point.

    utilorch run    --config run.yaml [--set key=value ...] [--grid G] [--out DIR] [--jobs N]
    utilorch ablate --config run.yaml [--set key=value ...] [--out DIR] [--jobs N]
    utilorch index  CORPUS_DIR OUTPUT.json
    utilorch report REPORT.json [--out DIR]
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

from utilorch.backend import BackendError
from utilorch.config import ConfigError, load_config
from utilorch.harness import DatasetError, GridError, format_table, run_experiment, write_csvs, write_report
from utilorch.retriever import CorpusError, build_index, load_corpus_dir

log = logging.getLogger("utilorch")


def fresh_run_dir(base: str | Path) -> Path:
    stamp = datetime.now().strftime("run-%Y%m%d-%H%M%S-%f")
    path = Path(base) / stamp
    n = 1
    while path.exists():
        path = Path(base) / f"{stamp}-{n}"
        n += 1
    return path


def _overrides(args: argparse.Namespace, grid: Optional[str]) -> list[str]:
    items = list(args.set or [])
    if grid:
        items.append(f"grid={grid}")
    if args.out:
        items.append(f"output_dir={json.dumps(str(args.out))}")
    if args.jobs is not None:
        items.append(f"jobs={args.jobs}")
    return items


def _run(args: argparse.Namespace, grid: Optional[str]) -> int:
    config = load_config(args.config, _overrides(args, grid))
    report = run_experiment(config.grid, config)
    out = fresh_run_dir(config.output_dir)
    path = write_report(report, out)
    write_csvs(report, out)
    print(format_table(report["rows"]))
    print(f"\nreport written to {path}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    return _run(args, args.grid)


def cmd_ablate(args: argparse.Namespace) -> int:
    return _run(args, "ablation")


def cmd_index(args: argparse.Namespace) -> int:
    index = build_index(load_corpus_dir(args.corpus_dir))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    index.save(out)
    stats = index.stats()
    print(f"N={stats['N']}")
    print(f"avgdl={stats['avgdl']:.4f}")
    print(f"vocabulary_size={stats['vocabulary_size']}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.report)
    report = json.loads(path.read_text(encoding="utf-8"))
    for f in write_csvs(report, args.out or path.parent):
        print(f)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="utilorch", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-path override (repeatable)")
        p.add_argument("--out", help="base output directory")
        p.add_argument("--jobs", type=int, help="episodes run in parallel")

    p = sub.add_parser("run", help="run an experiment grid")
    run_flags(p)
    p.add_argument("--grid", help="main, cost, fairness, redundancy, signals, ablation or depth")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run the policy ablation grid")
    run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("index", help="build a BM25 index from a directory of text files")
    p.add_argument("corpus_dir")
    p.add_argument("output")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("report", help="re-render CSV tables from a report file")
    p.add_argument("report")
    p.add_argument("--out", help="directory for the CSV files (default: next to the report)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, CorpusError, GridError, BackendError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
