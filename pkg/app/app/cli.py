"""
App name: Takens Reservoir Toolkit (takres)
Description: Command-line entry point. One subcommand per experiment:

    takres <experiment> [--config FILE] [--scale desk|full] [--seed N] [--out DIR] [--workers K]
    takres embed acf|fnn|embed [...]

Exit codes: 0 success, 1 failure, 2 config error, 3 divergence-dominated result.
"""

import argparse
import json
import sys
from typing import List, Optional

from usecase.experiments_usecase import ExperimentsUsecase
from utils.config import SCALES, ExperimentConfig
from utils.constants import Constants
from utils.exceptions import ConfigError
from utils.logger import logger

exp = Constants.Experiments
exit_code = Constants.ExitCode

EMBED_ACTIONS = {"acf": exp.EMBED_ACF, "fnn": exp.EMBED_FNN, "embed": exp.EMBED}

HELP = {
    exp.PREDICT: "ensemble closed-loop prediction benchmark",
    exp.SCAN_TAU: "filtered-readout scan over tau0_net",
    exp.SCAN_MU: "coupling-strength scan with eps bounds",
    exp.TRRNN: "delayed-readout (TrRNN) ensemble benchmark",
    exp.SCAN_DELAY: "TrRNN scan over tau_T",
    exp.FHN_CONTROL: "predictive pacing of a noisy FHN neuron",
    exp.NODE_SWEEP: "control quality versus network size",
    exp.CCA: "cross-correlation profile and attractor projections",
    exp.BOUNDS: "eps bounds for all and window-filtered nodes",
}


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors are config errors (exit 2) rather than SystemExit."""

    def error(self, message):
        raise ConfigError(message)


def _add_run_options(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--scale", choices=SCALES, help="ensemble/run-length preset")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--out", help="output directory (default: $TAKRES_OUT_DIR or ./results)")
    parser.add_argument("--workers", type=int, help="worker threads (default: $TAKRES_WORKERS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="takres", description="Takens-inspired reservoir computing experiments")
    parser.add_argument("--version", action="version", version=f"takres {Constants.VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    for name, text in HELP.items():
        _add_run_options(sub.add_parser(name, help=text))

    embed = sub.add_parser("embed", help="delay-embedding diagnostics (ACF, FNN, delay matrix)")
    embed.add_argument("action", choices=sorted(EMBED_ACTIONS))
    _add_run_options(embed)
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (or experiment defaults) plus command-line overrides."""
    experiment = EMBED_ACTIONS[args.action] if args.command == "embed" else args.command
    if args.config:
        config = ExperimentConfig.load(args.config, experiment, args.scale)
    else:
        config = ExperimentConfig.from_dict({}, experiment, args.scale)

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["out_dir"] = args.out
    return config.with_overrides(**overrides) if overrides else config


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        print(f"takres: error: {e}", file=sys.stderr)
        return exit_code.CONFIG_ERROR

    response = ExperimentsUsecase().run_experiment(config)
    context = response["context"]
    if "error" in context:
        print(f"takres: {context['message'].lower()}: {context['error']}", file=sys.stderr)
    else:
        print(json.dumps(context["data"]["summary"], sort_keys=True, default=str))
    return response["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
