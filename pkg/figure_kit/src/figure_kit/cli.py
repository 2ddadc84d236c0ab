"""Command line entry point: render one figure from thermlab CSV outputs."""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureJob, OutputExists, render
from .schemas import SchemaMismatch

EXIT_OK = 0
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figure",
        description="Render a publication-style figure from thermlab CSV outputs.",
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument(
        "--in",
        dest="inputs",
        action="append",
        required=True,
        metavar="PATH",
        help="input CSV in the kind's documented schema (repeatable to overlay "
        "several runs); a .json path supplies the verdicts annotation",
    )
    parser.add_argument("--out", required=True, metavar="PATH", help="output image path")
    parser.add_argument(
        "--force",
        action="store_true",
        help="overwrite the output path if it already exists",
    )
    parser.add_argument(
        "--rho",
        type=float,
        default=0.5,
        help="dyadic ratio used for the cascade reference line (default 0.5)",
    )
    parser.add_argument("--title", help="override the default figure title")
    parser.add_argument("--dpi", type=int, default=150)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = FigureJob(
            kind=args.kind,
            inputs=tuple(args.inputs),
            output=args.out,
            rho=args.rho,
            force=args.force,
            title=args.title,
            dpi=args.dpi,
        )
        out = render(job)
    except (SchemaMismatch, OutputExists, ValueError, OSError) as exc:
        print(f"figure: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
