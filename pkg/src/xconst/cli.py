"""Command-line harness.

Subcommands: gen-data, train, evaluate, analyze, sweep, report. All outputs
go under --out. Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure, 5 partial sweep failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .experiments import (
    ExperimentConfig,
    run_analyze,
    run_evaluate,
    run_gen_data,
    run_report,
    run_sweep,
    run_train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_PARTIAL = 5


def _setup_logging():
    level = os.environ.get("XCONST_LOG", "info").lower()
    logging.basicConfig(
        level=logging.DEBUG if level == "debug" else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(args):
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        doc = cfg.to_dict()
        doc["suite"]["seed"] = args.seed
        doc["data"]["seed"] = args.seed
        doc["model"]["seed"] = args.seed
        doc["train"]["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(doc)
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="xconst",
        description="Cipher-language lab for consistency-regularized "
                    "translation instruction finetuning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the config")
        if checkpoint:
            p.add_argument("--checkpoint", default=None,
                           help="checkpoint path (default: <out>/checkpoint.bin)")

    common(sub.add_parser("gen-data", help="write suite and dataset files"))
    common(sub.add_parser("train", help="train a model, write checkpoint + log"))
    common(sub.add_parser("evaluate", help="score a checkpoint"), checkpoint=True)
    common(sub.add_parser("analyze", help="representation study"), checkpoint=True)
    p = sub.add_parser("sweep", help="grid over strategy x alpha x lora")
    common(p)
    p.add_argument("--parallel", type=int, default=1,
                   help="number of sweep cells to run concurrently")

    p = sub.add_parser("report", help="combine run directories into one table")
    p.add_argument("runs", nargs="+", help="run directories with report.csv")
    p.add_argument("--out", required=True, help="output markdown file")
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            text, skipped = run_report(args.runs, args.out)
            print(text, end="")
            return EXIT_PARTIAL if skipped else EXIT_OK

        cfg = _load_config(args)
        if args.command == "gen-data":
            run_gen_data(cfg, args.out)
        elif args.command == "train":
            run_train(cfg, args.out)
        elif args.command == "evaluate":
            report = run_evaluate(cfg, args.out, checkpoint=args.checkpoint)
            print(report.to_markdown(), end="")
        elif args.command == "analyze":
            score, _ = run_analyze(cfg, args.out, checkpoint=args.checkpoint)
            print(f"alignment_score {score:.6f}")
        elif args.command == "sweep":
            failures = run_sweep(cfg, args.out, parallel=args.parallel)
            if failures:
                return EXIT_PARTIAL
        return EXIT_OK
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
