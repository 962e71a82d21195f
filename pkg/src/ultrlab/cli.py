"""Command-line entry point.

    ultrlab simulate          --config exp.ini [--out DIR] [--seed N]
    ultrlab train             --config exp.ini [--out DIR] [--seed N]
    ultrlab evaluate          --config exp.ini [--out DIR] [--seed N]
    ultrlab propensity-report --config exp.ini [--out DIR] [--seed N]
    ultrlab compare REPORT_A REPORT_B [--out FILE]

Exit code 0 on success; a structured one-line error and a nonzero exit
otherwise.
"""

from __future__ import annotations

import argparse
import sys

from . import experiment


def _add_config_flags(parser):
    parser.add_argument("--config", required=True, help="experiment INI file")
    parser.add_argument("--out", default=None, help="override the configured output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed list")


def build_parser():
    parser = argparse.ArgumentParser(prog="ultrlab", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("simulate", "simulate click sessions and export the ground-truth propensity"),
        ("train", "train every configured (method, seed) pair"),
        ("evaluate", "score trained runs on the annotated evaluation set"),
        ("propensity-report", "tabulate learned vs true propensity and CTR"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)

    p = sub.add_parser("compare", help="paired significance table between two evaluation reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out", default=None, help="write the table here instead of stdout only")
    p.add_argument("--alpha", type=float, default=0.05)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            rows, text = experiment.cmd_compare(
                args.report_a, args.report_b, out_path=args.out, alpha=args.alpha
            )
            sys.stdout.write(text)
            return 0
        config = experiment.load_config(args.config, seed_override=args.seed, out_override=args.out)
        if args.command == "simulate":
            sessions_path, truth_path = experiment.cmd_simulate(config)
            print(f"wrote {sessions_path}")
            print(f"wrote {truth_path}")
        elif args.command == "train":
            for directory in experiment.cmd_train(config):
                print(f"trained {directory}")
        elif args.command == "evaluate":
            for path in experiment.cmd_evaluate(config):
                print(f"wrote {path}")
        elif args.command == "propensity-report":
            written = experiment.cmd_propensity_report(config)
            if not written:
                print("error: no propensity checkpoints found for the configured grid", file=sys.stderr)
                return 3
            for path in written:
                print(f"wrote {path}")
        return 0
    except Exception as err:  # structured failure for scripting
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
