"""Command line entry point.

    cutlearn {simulate,calibrate,train,eval,compare} [--config PATH]
             [--seed U64] [--out DIR] [--model-tag cutsim|baseline]

Exit status: 0 on success, 1 for configuration errors, 2 for failures
while running.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, CutLearnError
from . import commands
from .config import load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cutlearn", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("simulate", "calibrate", "train", "eval", "compare"))
    p.add_argument("--config", help="TOML file overriding the defaults")
    p.add_argument("--seed", type=_u64, help="run seed (train: the single policy seed)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model-tag", choices=commands.TAGS, default=None)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config, seed=args.seed, out=args.out)
    seeds = None if args.seed is None else [args.seed]
    if args.command == "simulate":
        commands.cmd_simulate(cfg)
    elif args.command == "calibrate":
        commands.cmd_calibrate(cfg)
    elif args.command == "train":
        for tag in [args.model_tag] if args.model_tag else commands.TAGS:
            commands.cmd_train(cfg, tag, seeds)
    elif args.command == "eval":
        for tag in [args.model_tag] if args.model_tag else commands.TAGS:
            commands.cmd_eval(cfg, tag, None if seeds is None else seeds[0])
    else:
        commands.cmd_compare(cfg, None if seeds is None else seeds[0])
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"cutlearn: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CutLearnError, OSError, ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"cutlearn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
