"""``demboost`` command line.

    demboost <features|train|tune|correct|evaluate|synth> --config <path> [--out <dir>]

Exit codes: 0 success, 2 missing input, 3 empty dataset, 4 model/feature
mismatch, 5 misalignment, 1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import DemBoostError

log = logging.getLogger("demboost")

COMMANDS = ("features", "train", "tune", "correct", "evaluate", "synth")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demboost", description="Learn and remove per-cell DEM error.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run config")
    parser.add_argument("--out", default=None, help="output directory (overrides the config's 'out')")
    parser.add_argument("--model", default=None, help="correct: model file (default <out>/model.json)")
    parser.add_argument("--dem", default=None, help="correct: DEM to correct; evaluate: corrected DEM to score")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args) -> None:
    from . import pipeline

    cfg = pipeline.load_config(args.config, out=args.out)
    cmd = args.command
    if cmd == "synth":
        pipeline.cmd_synth(cfg)
    elif cmd == "features":
        pipeline.cmd_features(cfg)
    elif cmd == "train":
        _, report = pipeline.cmd_train(cfg)
        log.info("test RMSE %.4f m (original %.4f m)", report["test_rmse"] or float("nan"), report["original_rmse"])
    elif cmd == "tune":
        _, report = pipeline.cmd_tune(cfg)
        log.info("tuned test RMSE %.4f m", report["test_rmse"] or float("nan"))
    elif cmd == "correct":
        pipeline.cmd_correct(cfg, model_path=args.model, dem_path=args.dem)
    elif cmd == "evaluate":
        report = pipeline.cmd_evaluate(cfg, corrected_path=args.dem)
        for r in report.records:
            if r.improvement_pct is None:
                log.info("site %s: original %.3f m", r.site, r.original_rmse)
            else:
                log.info("site %s: original %.3f m, corrected %.3f m, improvement %.1f%%", r.site, r.original_rmse, r.corrected_rmse, r.improvement_pct)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run(args)
    except DemBoostError as exc:
        print(f"demboost {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"demboost {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
