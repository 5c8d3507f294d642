"""Entry point: render one figure from flags or a JSON spec file.

Exit codes: 0 on success (including empty-axes renders of header-only
CSVs), 2 on bad arguments, unreadable inputs, or missing columns.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .figures import FIGURE_KINDS, FigureSpec, render

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2

_SPEC_KEYS = {"kind", "inputs", "output", "labels", "window"}


class SpecError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftplots",
        description="Render a figure from the training CLI's CSV tables.",
    )
    parser.add_argument("inputs", nargs="*", help="input CSV files")
    parser.add_argument("--spec", metavar="FILE",
                        help="JSON figure spec (kind/inputs/output/labels/window); "
                             "replaces all other flags")
    parser.add_argument("--kind", choices=FIGURE_KINDS, help="figure kind")
    parser.add_argument("--out", metavar="FILE", help="output image path")
    parser.add_argument("--label", action="append", dest="labels",
                        metavar="TEXT", help="series label, once per input")
    parser.add_argument("--window", type=int, default=30,
                        help="render-time smoothing window (default 30)")
    return parser


def spec_from_args(args) -> FigureSpec:
    if args.spec is not None:
        if args.kind or args.out or args.inputs or args.labels:
            raise SpecError("--spec replaces --kind/--out/--label/inputs; "
                            "pass one or the other")
        path = Path(args.spec)
        if not path.exists():
            raise SpecError(f"spec file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise SpecError(f"{path}: not valid JSON ({e})") from None
        if not isinstance(data, dict):
            raise SpecError(f"{path}: expected a JSON object")
        unknown = set(data) - _SPEC_KEYS
        if unknown:
            raise SpecError(
                f"{path}: unknown spec key(s) {', '.join(sorted(unknown))} "
                f"(allowed: {', '.join(sorted(_SPEC_KEYS))})"
            )
        for key in ("kind", "inputs", "output"):
            if key not in data:
                raise SpecError(f"{path}: missing spec key {key!r}")
        return FigureSpec(
            kind=data["kind"],
            inputs=tuple(data["inputs"]),
            output=data["output"],
            labels=tuple(data["labels"]) if data.get("labels") else None,
            window=int(data.get("window", 30)),
        )
    if args.kind is None or args.out is None or not args.inputs:
        raise SpecError("--kind, --out, and at least one input CSV are "
                        "required (or use --spec)")
    return FigureSpec(
        kind=args.kind,
        inputs=tuple(args.inputs),
        output=args.out,
        labels=tuple(args.labels) if args.labels else None,
        window=args.window,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(args)
        out = render(spec)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
