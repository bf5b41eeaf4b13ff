"""Command-line entry point: run experiments, emit presets, emit plot scripts."""

import argparse
import json
import sys

from .harness import ConfigError, emit_plot_script, run_experiment, sweep_presets

VERSION = "0.1.0"


def build_parser():
    parser = argparse.ArgumentParser(
        prog="irsrsma",
        description="Max-min fair uplink rate-splitting experiments with an "
                    "IRS-aided channel and successive group decoding.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run all trials of a JSON config")
    p_run.add_argument("--config", required=True, help="config JSON path")
    p_run.add_argument("--out", required=True, help="output CSV path")
    p_run.add_argument("--parallel", type=int, default=1, help="worker processes")

    p_preset = sub.add_parser("preset", help="write a named experiment config")
    p_preset.add_argument("--name", required=True, help="fig5|fig6|fig7|fig8")
    p_preset.add_argument("--scale", required=True, help="full|desk")
    p_preset.add_argument("--out", required=True, help="config JSON path to write")

    p_plot = sub.add_parser("plot", help="emit a gnuplot script for a results CSV")
    p_plot.add_argument("--csv", required=True, help="results CSV path")
    p_plot.add_argument("--out", required=True, help="script path to write")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            failures = run_experiment(args.config, args.out, parallelism=args.parallel)
            return 1 if failures else 0
        if args.command == "preset":
            doc = sweep_presets(args.name, args.scale)
            with open(args.out, "w") as fh:
                json.dump(doc, fh, indent=2)
                fh.write("\n")
            return 0
        if args.command == "plot":
            script = emit_plot_script(args.csv)
            with open(args.out, "w") as fh:
                fh.write(script)
            return 0
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
