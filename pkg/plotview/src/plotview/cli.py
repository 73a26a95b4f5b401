"""Command-line entry point.

    plot curves <train_log.csv> [more logs ...] --out fig.png [--smoothing N]
    plot qgrid  <qgrid.csv> --out fig.png

Exit codes: 0 on success, 2 on invalid input (unreadable file, schema or
data-consistency error).
"""

from __future__ import annotations

import argparse
import sys

from .curves import CurveSpec, render_curves
from .logs import SchemaError
from .qgrid import render_qgrid

__all__ = ["build_parser", "main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render figures from training-run CSV artifacts."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    curves = sub.add_parser("curves", help="learning curves, one panel per task")
    curves.add_argument("logs", nargs="+", help="train_log.csv files to aggregate")
    curves.add_argument("--out", required=True, help="output PNG path")
    curves.add_argument(
        "--smoothing",
        type=int,
        default=5,
        help="trailing moving-average window in evaluation points (1 disables)",
    )

    qgrid = sub.add_parser("qgrid", help="critic-value contours over the action grid")
    qgrid.add_argument("csv", help="qgrid.csv file")
    qgrid.add_argument("--out", required=True, help="output PNG path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "curves":
            spec = CurveSpec(
                log_paths=tuple(args.logs),
                out_path=args.out,
                smoothing_window=args.smoothing,
            )
            out = render_curves(spec)
        else:
            out = render_qgrid(args.csv, args.out)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
