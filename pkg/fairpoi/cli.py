"""Command-line entry point: ``fairpoi <stage> [options]``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from fairpoi import __version__
from fairpoi.config import ExperimentConfig, load_config
from fairpoi.errors import FairPoiError
from fairpoi.harness import Pipeline, run
from fairpoi.synthetic import generate_lbsn, write_lbsn

_logger = logging.getLogger("fairpoi")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairpoi",
        description="Two-sided fairness benchmark for POI recommendation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="Experiment config (YAML)")
    parser.add_argument("--out", help="Output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, help="Seed for every model and the user sample")
    parser.add_argument("--threads", type=int, help="Model pipelines trained in parallel")
    parser.add_argument("--sample", type=float, help="Fraction of users to keep, in (0, 1]")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")

    commands = parser.add_subparsers(dest="command", required=True, metavar="command")
    commands.add_parser("prep", help="Ingest, filter, split and sample the dataset")
    commands.add_parser("analyze", help="Long-tail, group and profile-popularity analysis")
    train = commands.add_parser("train", help="Train one configured model (with validation grid search)")
    train.add_argument("model", help="Model name from the config roster")
    rec = commands.add_parser("recommend", help="Write top-k rankings of one model")
    rec.add_argument("model", help="Model name from the config roster")
    commands.add_parser("evaluate", help="Accuracy and fairness metrics of every model")
    commands.add_parser("report", help="Emit report.json, table.csv and tradeoff.csv")
    commands.add_parser("run", help="All stages")
    synth = commands.add_parser("synth", help="Write a synthetic LBSN dataset with a ready config")
    synth.add_argument("--users", type=int, default=200)
    synth.add_argument("--pois", type=int, default=500)
    return parser


def overrides_from(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.sample is not None:
        overrides["sampling.fraction"] = args.sample
    if args.out is not None:
        overrides["output.dir"] = args.out
    return overrides


def dispatch(args: argparse.Namespace, config: ExperimentConfig) -> None:
    if args.command == "run":
        report, _ = run(config)
        for evaluation in report.models:
            _logger.info("%s: NDCG@%d %s", evaluation.name, report.k, evaluation.ndcg)
        return
    pipeline = Pipeline(config)
    if args.command == "prep":
        pipeline.prep()
    elif args.command == "analyze":
        pipeline.analyze()
    elif args.command == "train":
        pipeline.train(args.model)
    elif args.command == "recommend":
        pipeline.recommend(args.model)
    elif args.command == "evaluate":
        pipeline.evaluate()
    elif args.command == "report":
        pipeline.report()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        if args.command == "synth":
            outdir = Path(args.out or "synthetic")
            seed = 7 if args.seed is None else args.seed
            paths = write_lbsn(generate_lbsn(args.users, args.pois, seed), outdir)
            print(f"Wrote {paths['config']}")
            return 0
        config = load_config(args.config, overrides_from(args))
        dispatch(args, config)
    except FairPoiError as exc:
        _logger.error("%s", exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
