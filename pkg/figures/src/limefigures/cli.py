"""Script entry: render one figure from a tablime CSV report."""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="limefigures",
        description="Render whisker/field/sweep figures from tablime CSVs.",
    )
    parser.add_argument("input_csv")
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--out", required=True, help="PNG or SVG output path")
    parser.add_argument("--title", default=None)
    args = parser.parse_args(argv)
    try:
        result = render(FigureSpec(input_csv=args.input_csv, kind=args.kind,
                                   output=args.out, title=args.title))
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.path} ({result.marks} marks)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
