"""
Command-line entry point: python cli.py <subcommand> [options]

Exit codes: 0 success, 1 domain error, 2 usage or configuration error.
Diagnostics go to stderr; machine outputs only to the declared paths (curate and eval
also print their tables / JSON summaries to stdout).
"""
import argparse
import json
import logging
import sys
from typing import Dict, List, Optional, Sequence

from config import settings
from errors import ConfigError, SylvanError
from schemas import load_run_config
from tasks import pipeline_tasks as tasks

logger = logging.getLogger("sylvan")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one RunConfig key (value parsed as JSON); repeatable",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sylvan", description="Land-cover tile classification pipeline")
    parser.add_argument("--log-level", default=None, help="override SYLVAN_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    p = sub.add_parser("curate", help="cut labelled tiles from rasters into a manifest")
    _add_config_args(p)

    p = sub.add_parser("split", help="stratified train/val/test split of a manifest")
    _add_config_args(p)

    p = sub.add_parser("train", help="train a classifier; writes checkpoints and a metrics CSV")
    _add_config_args(p)

    p = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", help="default: io.best_checkpoint")
    p.add_argument("--manifest", help="default: io.split_manifest")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", help="write the confusion matrix CSV here")

    p = sub.add_parser("classify", help="classify a whole raster into a class map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--raster", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter", action="store_true", help="apply the 3x3 majority filter")
    p.add_argument("--year", help="year tag stored in the map")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--strict", action="store_true", default=None, help="resolution mismatch is an error")
    p.add_argument("--resample", action="store_true", help="resample to the checkpoint resolution first")

    p = sub.add_parser("filter", help="3x3 majority filter of a class map")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="render a class map as PPM (and optional PNG preview)")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--png", help="also write a matplotlib PNG preview")
    p.add_argument("--mask", help="GeoJSON polygons outlined on the PNG preview")

    p = sub.add_parser("report", help="multi-year area distribution report")
    p.add_argument("--maps", required=True, help="comma-separated class map paths")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mask", help="GeoJSON region mask")
    p.add_argument("--log-dir", help="write a JSON run log under <dir>/logs/ (default: SYLVAN_OUTPUT_BASE, else none)")

    p = sub.add_parser("synth", help="emit the synthetic acceptance dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=2500)
    p.add_argument("--val", type=int, default=500)
    p.add_argument("--test", type=int, default=500)

    p = sub.add_parser("selftest", help="gradient, convolution-oracle and fixture checks")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--oracle-configs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _emit(payload: Dict) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def dispatch(args: argparse.Namespace) -> int:
    cmd = args.command
    if cmd in ("curate", "split", "train", "eval"):
        cfg = load_run_config(args.config, args.overrides)
        if cmd == "curate":
            summary = tasks.run_curate(cfg)
            sys.stdout.write(summary["table"] + "\n")
            return 0
        if cmd == "split":
            tasks.run_split(cfg)
        elif cmd == "train":
            tasks.run_train(cfg)
        else:
            _emit(tasks.run_eval(cfg, args.checkpoint, args.manifest, args.split, args.out))
        return 0
    if cmd == "classify":
        tasks.run_classify(
            args.checkpoint, args.raster, args.out, args.filter, args.year, args.batch_size, args.strict, args.resample
        )
    elif cmd == "filter":
        tasks.run_filter(args.map, args.out)
    elif cmd == "render":
        tasks.run_render(args.map, args.out, args.png, args.mask)
    elif cmd == "report":
        paths = [p.strip() for p in args.maps.split(",") if p.strip()]
        tasks.run_report(paths, args.out, args.mask, args.log_dir)
    elif cmd == "synth":
        tasks.run_synth(args.out, args.seed, {"train": args.train, "val": args.val, "test": args.test})
    elif cmd == "selftest":
        result = tasks.run_selftest(args.instances, args.oracle_configs, args.seed)
        return 0 if result["passed"] else 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit 2 with the synopsis
    logging.basicConfig(
        level=(args.log_level or settings.sylvan_log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return dispatch(args)
    except ConfigError as e:
        subparsers: List = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
        sub = subparsers[0].choices.get(args.command) if subparsers else None
        (sub or parser).print_usage(sys.stderr)
        logger.error("%s", e)
        return 2
    except (SylvanError, FileNotFoundError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1
    except Exception:
        logger.exception("%s failed", args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
