"""CLI: plots <kind> <inputs...> -o <path> [--label NAME ...]"""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render figures from run report files")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("inputs", nargs="+",
                        help="report.json or series.json files, per kind")
    parser.add_argument("-o", "--output", required=True,
                        help="output image path (sidecar CSV written beside it)")
    parser.add_argument("--label", action="append", default=[],
                        help="legend label per input (repeatable)")
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        spec = FigureSpec(kind=args.kind, inputs=args.inputs,
                          output=args.output, labels=args.label)
        out = render(spec)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out} and {out.with_suffix('.csv')}")
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
