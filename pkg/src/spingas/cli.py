"""Command line entry point: simulate <config> [options].

Exit codes: 0 success, 2 configuration error, 3 capacity error, 4 partial
failure (some grid points or samples failed but results were written).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import CapacityError, ConfigError
from .runner import load_config, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_PARTIAL = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description=(
            "Run a trapped two-level Bose gas scenario: spin dephasing, "
            "self-rephasing maps, squeezing protection, ideal-gas curves."
        ),
        epilog=(
            "The config is an INI file (sections: scenario, physics, grid, prep, "
            "time, basis, propagation) or a manifest.json from a previous run; "
            "defaults are echoed into the output manifest.  Outputs: series.csv, "
            "map.csv (sweeps), samples.csv, manifest.json."
        ),
    )
    parser.add_argument("config", help="scenario INI file or manifest.json to reproduce")
    parser.add_argument("--out", default="run_out", help="output directory (default: run_out)")
    parser.add_argument("--seed", type=int, default=None, help="override the prep RNG seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes for the sample loop (default 1)")
    parser.add_argument("--samples", type=int, default=None,
                        help="override the number of thermal samples")
    parser.add_argument("--freeze-spatial", action="store_true",
                        help="restrict every per-sample basis to its spatial profile")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_config(args.config)
        if args.seed is not None:
            scenario = replace(scenario, prep=replace(scenario.prep, rng_seed=args.seed))
        if args.samples is not None:
            scenario = replace(scenario, prep=replace(scenario.prep, n_samples=args.samples))
        if args.freeze_spatial:
            scenario = replace(scenario, freeze_spatial=True)
        result = run_scenario(scenario, out_dir=args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    failures = result.manifest.get("failures", [])
    if failures:
        print(f"partial failure: {len(failures)} sample(s) failed; see manifest", file=sys.stderr)
        return EXIT_PARTIAL
    print(f"wrote {args.out} ({result.scenario.kind}, "
          f"wall {result.manifest.get('wall_time_s', 0):.1f}s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
