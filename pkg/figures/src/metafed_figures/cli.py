"""CLI: ``figures render --spec spec.json`` or ``figures render CSV KIND OUT``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .spec import KINDS, FigureSpec, SchemaError, load_spec
from .render import render_to_file


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figures", description="Render figures from simulator CSV tables")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure")
    p.add_argument("positional", nargs="*", metavar="CSV KIND OUT",
                   help=f"input table, kind ({', '.join(KINDS)}), output image")
    p.add_argument("--spec", type=Path, default=None, help="figure spec JSON")
    p.add_argument("--title", type=str, default="")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.spec is not None:
            if args.positional:
                raise SchemaError("pass either --spec or positional CSV KIND OUT")
            spec = load_spec(args.spec)
        else:
            if len(args.positional) != 3:
                raise SchemaError("expected positional arguments: CSV KIND OUT")
            csv_path, kind, out = args.positional
            spec = FigureSpec(Path(csv_path), kind, Path(out), title=args.title)
        render_to_file(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(spec.out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
