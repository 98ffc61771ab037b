"""Command-line entry point."""
import argparse
import logging
import sys

from .config import MODES, load_config
from .errors import MH2MError
from .pipeline import run_command


def build_parser():
    parser = argparse.ArgumentParser(prog="mh2m", description="Multiscale hybrid-hybrid solver for -div(A grad u) = f.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (default: outputs.dir)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: $MH2M_THREADS or 1)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return run_command(cfg, mode=args.mode, out=args.out, threads=args.threads)
    except MH2MError as exc:
        stage = type(exc).__name__
        print(f"mh2m {args.mode}: {stage}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
