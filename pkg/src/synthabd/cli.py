"""Command-line interface.

Subcommands: preprocess, cluster-variants, synth, evaluate, compare. Every
run takes a JSON config and an explicit seed (flag or config field); there
is no wall-clock fallback. Logging verbosity comes from the SYNTHABD_LOG
environment variable (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import SynthAbdError
from .pipeline import (
    EvaluationConfig,
    PipelineConfig,
    run_cluster_variants,
    run_compare,
    run_evaluate,
    run_preprocess,
    run_synth,
)

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    name = os.environ.get("SYNTHABD_LOG", "warn").lower()
    level = _LOG_LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    p.add_argument("--workers", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthabd",
        description="Synthetic abdominal training data: preprocessing, label "
                    "clustering, on-the-fly synthesis, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resample, crop/pad, remap labels, precondition CT")
    _add_common(p)
    p.add_argument("--input-dir", default=None)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("cluster-variants", help="expand subjects into augmented label variants")
    _add_common(p)
    p.add_argument("--in-dir", default=None)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("synth", help="generate synthetic image/label pairs")
    _add_common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--start", type=int, default=0,
                   help="absolute index of the first sample to generate")
    p.add_argument("--variants-dir", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--stdout-manifest", action="store_true",
                   help="print the manifest JSON to stdout")

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred-dir", default=None)
    p.add_argument("--gt-dir", default=None)
    p.add_argument("--labels", default=None, help="JSON file: {label id: name} or a list of ids")
    p.add_argument("--out", default=None, help="report CSV path (summary.json written alongside)")

    p = sub.add_parser("compare", help="Kruskal-Wallis between metric reports")
    _add_common(p)
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = PipelineConfig.from_json_file(args.config).with_seed(args.seed)
        if args.command == "preprocess":
            result = run_preprocess(cfg, args.input_dir, args.out_dir)
        elif args.command == "cluster-variants":
            result = run_cluster_variants(cfg, args.in_dir, args.out_dir)
        elif args.command == "synth":
            result = run_synth(cfg, args.count, workers=args.workers,
                               variants_dir=args.variants_dir, out_dir=args.out_dir,
                               stdout_manifest=args.stdout_manifest, start=args.start)
        elif args.command == "evaluate":
            if args.labels:
                with open(args.labels) as f:
                    cfg = PipelineConfig(
                        cfg.paths, cfg.labelprep, cfg.clustering, cfg.generation,
                        EvaluationConfig.from_json_dict(
                            {"labels": json.load(f), "pooled_hd95": cfg.evaluation.pooled_hd95}
                        ),
                        cfg.seed,
                    )
            result = run_evaluate(cfg, args.pred_dir, args.gt_dir, args.out)
        else:
            result = run_compare(cfg, args.reports, args.out)
    except SynthAbdError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
