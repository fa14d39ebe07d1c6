"""render_figures <run-dir> [--out DIR]: figures from simulation outputs."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import render_run_dir
from .spec import EmptyMapError, MissingColumnError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render_figures",
        description="Render PNG + SVG figures from a simulation run directory "
                    "(series.csv / map.csv / manifest.json).",
    )
    parser.add_argument("run_dir", help="run directory produced by the simulate CLI")
    parser.add_argument("--out", default="figs", help="output directory (default: figs)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        written = render_run_dir(Path(args.run_dir), Path(args.out))
    except (MissingColumnError, EmptyMapError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
