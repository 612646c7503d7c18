"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
The default output root is ``$PROMPTEVO_OUT`` (``./runs`` when unset).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..errors import (
    DataError,
    InvalidConfigError,
    NonFiniteError,
    PGMError,
    WeightFileError,
)
from ..oracle.candidates import DEFAULT_DELTAS
from .commands import COMMANDS
from .manifest import RunManifest

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "PROMPTEVO_OUT"
PATH_FLAGS = ("data", "weights", "weights_out", "out")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive(v: str) -> int:
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _deltas(v: str) -> list[float]:
    try:
        return [float(x) for x in v.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad delta list {v!r}") from exc


def _add_segmenter_flags(p):
    g = p.add_argument_group("segmenter")
    g.add_argument("--kappa", type=float, default=10.0, help="logit scale")
    g.add_argument("--tau", type=float, default=0.3, help="affinity offset")
    g.add_argument("--lambda-i", dest="lambda_i", type=float, default=4.0, help="intensity weight")
    g.add_argument("--lambda-r", dest="lambda_r", type=float, default=4.0, help="radius weight")
    g.add_argument("--k", type=float, default=10.0, help="sharpening slope applied before scoring")


def _add_evolve_flags(p):
    g = p.add_argument_group("evolution")
    g.add_argument("--iters", type=_positive, default=50)
    g.add_argument("--lr", type=float, default=10.0, help="Adam step size for the prompt")
    g.add_argument("--margin", type=float, default=0.0, help="keep prompts this far from the border")
    g.add_argument("--jobs", type=_positive, default=1, help="evolve images in parallel processes")


def _add_selection(p, allow_split=True):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--id", help="single sample id")
    if allow_split:
        g.add_argument("--split", help="all samples of a split (default: test)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="promptevo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--train", type=_positive, default=40)
    p.add_argument("--val", type=_positive, default=20)
    p.add_argument("--test", type=_positive, default=50)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train the Dice regressor")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=_positive, default=200)
    p.add_argument("--batch", type=_positive, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=_positive, default=None)
    p.add_argument("--deltas", type=_deltas, default=list(DEFAULT_DELTAS), help="comma-separated level-set offsets")
    p.add_argument("--weights-out", dest="weights_out")
    p.add_argument("--out")
    _add_segmenter_flags(p)

    p = sub.add_parser("heatmap", help="dice (and score) at every in-mask prompt location")
    p.add_argument("--data", required=True)
    _add_selection(p)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--weights")
    p.add_argument("--out")
    _add_segmenter_flags(p)

    p = sub.add_parser("evolve", help="evolve prompts and write trajectories")
    p.add_argument("--data", required=True)
    _add_selection(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--dump-masks", dest="dump_masks", action="store_true", help="write the scored mask of every step as PGM")
    p.add_argument("--out")
    _add_segmenter_flags(p)
    _add_evolve_flags(p)

    p = sub.add_parser("evaluate", help="initial vs evolved dice over a split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--weights", required=True)
    p.add_argument("--trajectories", action="store_true", help="also write per-image trajectory CSVs")
    p.add_argument("--out")
    _add_segmenter_flags(p)
    _add_evolve_flags(p)

    p = sub.add_parser("replay", help="re-run a command from its run_manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to this directory instead of the original one")
    return parser


def _default_out(command: str) -> str:
    return str(Path(os.environ.get(OUT_ENV, "runs")) / command)


def _normalize(flags: dict) -> dict:
    for key in PATH_FLAGS:
        if flags.get(key):
            flags[key] = str(Path(flags[key]).resolve())
    return flags


def run(command: str, flags: dict) -> int:
    if command == "heatmap" and flags.get("stride", 1) < 1:
        raise UsageError("--stride must be >= 1")
    manifest = RunManifest(command, flags, flags.get("seed"), flags["out"])
    manifest.write()
    status = "failed"
    try:
        COMMANDS[command](flags)
        status = "ok"
    finally:
        manifest.finalize(status)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    command = args.command
    try:
        if command == "replay":
            m = RunManifest.load(args.manifest)
            command, flags = m.command, dict(m.flags)
            if args.out:
                flags["out"] = args.out
        if not flags.get("out"):
            flags["out"] = _default_out(command)
        flags = _normalize(flags)
        return run(command, flags)
    except (UsageError, InvalidConfigError) as exc:
        print(f"promptevo: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PGMError, WeightFileError, OSError) as exc:
        print(f"promptevo: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"promptevo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
