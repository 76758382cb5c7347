"""Command-line entry point: ``erspin <command> --config run.toml [--seed N] [--out path] [--format csv|jsonl]``."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .commands import COMMAND_TABLE, emit, run_command
from .config import load_config
from .errors import (
    FitDiverged,
    IoError,
    NoEntanglingAxis,
    NoFeasibleSequence,
    NoRootInWindow,
    NotUnitary,
    NumericalFailure,
    ZeroPrecession,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INFEASIBLE = 0, 2, 3, 4

# failures of the numerics themselves; other value errors trace back to the inputs
_NUMERICAL = (FitDiverged, NumericalFailure, NoRootInWindow, NotUnitary, NoEntanglingAxis, ZeroPrecession,
              ArithmeticError, np.linalg.LinAlgError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="erspin", description="Er spin-register experiments and sequence design")
    p.add_argument("command", choices=sorted(COMMAND_TABLE), help="experiment to run")
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output file (default: the config's output.path, else stdout)")
    p.add_argument("--format", choices=("csv", "jsonl"), default=None, help="output format (default: config)")
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, NoFeasibleSequence):
        return EXIT_INFEASIBLE
    if isinstance(exc, _NUMERICAL):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError, IoError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        record = run_command(cfg, args.command)
        fmt = args.format or cfg.output_format
        path = args.out or cfg.output_path
        text = emit(record, fmt, path)
        if path is None:
            sys.stdout.write(text)
    except Exception as exc:  # mapped to documented exit codes
        code = exit_code(exc)
        print(f"erspin: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
