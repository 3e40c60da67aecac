"""``twrn-sync`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import ConfigError, NumericalError
from .harness import ExperimentConfig, run_campaign, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _snr_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twrn-sync", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment campaign")
    run.add_argument("--config", help="JSON file with ExperimentConfig fields")
    run.add_argument("--experiment", choices=["mse", "ber", "crlb-only", "complexity"])
    run.add_argument("--snr", type=_snr_list, help="comma-separated SNR points in dB")
    run.add_argument("--frames", type=int)
    run.add_argument("--estimator", choices=["ml", "de"])
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--workers", type=int)
    run.add_argument("--keep-trials", action="store_true", default=None)
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_config(args) -> ExperimentConfig:
    base = ExperimentConfig.from_json(args.config).to_dict() if args.config else {}
    overrides = {
        "kind": args.experiment,
        "snr_db": args.snr,
        "frames": args.frames,
        "estimator": args.estimator,
        "seed": args.seed,
        "out": args.out,
        "workers": args.workers,
        "keep_trials": args.keep_trials,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        summary = run_campaign(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    try:
        write_outputs(config, summary)
    except OSError as exc:
        print(f"I/O error writing {exc.filename or config.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
