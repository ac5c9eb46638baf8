"""Differentially private clustered federated learning simulator."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Union

from dpcfl.core.config import ALGORITHMS, default_output_dir, load_config
from dpcfl.errors import CalibrationError, ConfigError
from dpcfl.experiment import (
    EXIT_INFEASIBLE,
    EXIT_USAGE,
    cmd_calibrate,
    cmd_generate_data,
    cmd_mss_sweep,
    cmd_run,
    cmd_sweep,
    cmd_tune,
    cmd_validate,
)
from dpcfl.validation import SUITES

logger = logging.getLogger(__name__)

EXIT_INTERRUPTED = 130


def _full_or_int(value: str) -> Union[str, int]:
    if value == "full":
        return value
    try:
        return int(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError("expected 'full' or an integer") from e


def _auto_or_int(value: str) -> Union[str, int]:
    if value == "auto":
        return value
    try:
        return int(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError("expected 'auto' or an integer") from e


def _add_common(parser: argparse.ArgumentParser) -> None:
    """options shared by every subcommand."""
    parser.add_argument("--config", metavar="FILE", help="JSON config file")
    parser.add_argument(
        "-o",
        "--output",
        metavar="DIR",
        help="output directory (default: $DPCFL_OUTPUT_DIR or ./dpcfl-out)",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="enable debug logging"
    )
    parser.add_argument(
        "-q", "--quiet", action="store_true", help="suppress all non-error output"
    )
    parser.add_argument(
        "--progress", action="store_true", help="show progress while running"
    )

    group = parser.add_argument_group("overrides (take precedence over --config)")
    group.add_argument(
        "--algorithm",
        dest="algorithms",
        action="append",
        choices=ALGORITHMS,
        help="algorithm to run (repeatable)",
    )
    group.add_argument("--epsilon", type=float, help="total privacy budget")
    group.add_argument("--delta", type=float, help="target delta")
    group.add_argument("--rounds", type=int, help="communication rounds E")
    group.add_argument("--epochs", type=int, help="local epochs K per round")
    group.add_argument("--lr", type=float, help="local learning rate")
    group.add_argument("--clip", type=float, help="per-sample clipping threshold")
    group.add_argument("--b1", type=_full_or_int, help="first-round batch size or 'full'")
    group.add_argument(
        "--b-rest",
        dest="b_rest",
        type=_auto_or_int,
        help="batch size after round 1, or 'auto' for N / (rounds * epochs)",
    )
    group.add_argument(
        "--num-clusters",
        dest="num_clusters",
        type=_auto_or_int,
        help="number of clusters or 'auto'",
    )
    group.add_argument(
        "--select-fraction",
        dest="select_fraction",
        type=float,
        help="share of the budget spent on cluster selection",
    )
    group.add_argument(
        "--mrmtl-lambda", dest="mrmtl_lambda", type=float, help="MR-MTL regularization"
    )
    group.add_argument("--predictor", choices=("logreg", "mlp"), help="model family")
    group.add_argument("--seeds", type=int, nargs="+", help="master seeds")
    group.add_argument(
        "--epsilon-grid", dest="epsilon_grid", type=float, nargs="+", help="sweep budgets"
    )
    group.add_argument(
        "--lr-grid", dest="lr_grid", type=float, nargs="+", help="learning rates to tune"
    )
    group.add_argument(
        "--clip-grid",
        dest="clip_grid",
        type=float,
        nargs="+",
        help="clipping thresholds to tune",
    )
    group.add_argument(
        "--validation-fraction",
        dest="validation_fraction",
        type=float,
        help="share of each client's train data held out for tuning",
    )
    group.add_argument(
        "--samples-grid",
        dest="mss_samples_grid",
        type=int,
        nargs="+",
        help="examples per client for mss-sweep",
    )
    group.add_argument(
        "--b-rest-grid",
        dest="mss_b_rest_grid",
        type=int,
        nargs="+",
        help="batch sizes after round 1 for mss-sweep",
    )
    group.add_argument("--jobs", type=int, help="parallel worker processes")
    group.add_argument(
        "--soft-weights",
        dest="soft_weights",
        action="store_const",
        const=True,
        help="weight soft-clustering updates by responsibilities",
    )
    group.add_argument(
        "--nonprivate-selection",
        dest="nonprivate_selection",
        action="store_const",
        const=True,
        help="select clusters by plain train loss (diagnostics only)",
    )
    group.add_argument("--dataset-seed", dest="dataset.seed", type=int, help="dataset seed")
    group.add_argument(
        "--shift", dest="dataset.shift", choices=("covariate", "concept"), help="cluster shift"
    )
    group.add_argument(
        "--samples-per-client",
        dest="dataset.samples_per_client",
        type=int,
        help="examples generated per client",
    )
    group.add_argument(
        "--dataset", dest="dataset.path", metavar="DIR", help="load a generated dataset"
    )


_OVERRIDE_KEYS = (
    "algorithms",
    "epsilon",
    "delta",
    "rounds",
    "epochs",
    "lr",
    "clip",
    "b1",
    "b_rest",
    "num_clusters",
    "select_fraction",
    "mrmtl_lambda",
    "predictor",
    "seeds",
    "epsilon_grid",
    "jobs",
    "lr_grid",
    "clip_grid",
    "validation_fraction",
    "mss_samples_grid",
    "mss_b_rest_grid",
    "soft_weights",
    "nonprivate_selection",
    "dataset.seed",
    "dataset.shift",
    "dataset.samples_per_client",
    "dataset.path",
)


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}


def build_parser() -> argparse.ArgumentParser:
    """builds the dpcfl argument parser."""
    parser = argparse.ArgumentParser(
        description="Simulate differentially private clustered federated learning"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    _add_common(
        commands.add_parser("generate-data", help="write the synthetic dataset to files")
    )
    _add_common(
        commands.add_parser("calibrate", help="print calibrated noise per client")
    )
    _add_common(commands.add_parser("run", help="run algorithms over seeds"))
    _add_common(
        commands.add_parser("sweep", help="run algorithms over the epsilon grid and seeds")
    )
    _add_common(
        commands.add_parser(
            "tune", help="grid-search lr and clip on per-client validation data"
        )
    )
    _add_common(
        commands.add_parser(
            "mss-sweep",
            help="first-round MSS over the epsilon grid, dataset sizes and batch sizes",
        )
    )
    validate = commands.add_parser("validate", help="run a validation suite")
    validate.add_argument("suite", choices=SUITES.names(), help="suite name")
    _add_common(validate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """
    main entry point for the dpcfl CLI.

    Args:
        argv: command line arguments (defaults to sys.argv[1:])

    Returns:
        exit code (0 success, 1 partial failure, 2 usage or config error,
        3 infeasible privacy budget, 4 validation failure, 130 interrupted)
    """
    args = build_parser().parse_args(argv)

    # configures logging
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="[%(levelname)s] %(message)s",
    )

    try:
        config = load_config(
            Path(args.config) if args.config else None, _overrides(args)
        )
    except ConfigError as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_USAGE

    output = Path(args.output) if args.output else default_output_dir()
    options = {"quiet": args.quiet, "progress": args.progress}

    try:
        if args.command == "generate-data":
            return cmd_generate_data(config, output, **options)
        if args.command == "calibrate":
            return cmd_calibrate(config, **options)
        if args.command == "run":
            return cmd_run(config, output, **options)
        if args.command == "sweep":
            return cmd_sweep(config, output, **options)
        if args.command == "tune":
            return cmd_tune(config, output, **options)
        if args.command == "mss-sweep":
            return cmd_mss_sweep(config, output, **options)
        return cmd_validate(
            args.suite, config, output=Path(args.output) if args.output else None, **options
        )
    except KeyboardInterrupt:
        print("\nInterrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except CalibrationError as e:
        logger.error("Privacy budget infeasible: %s", e)
        return EXIT_INFEASIBLE
    except Exception as e:
        logger.error("Fatal error: %s", e)
        return EXIT_USAGE
