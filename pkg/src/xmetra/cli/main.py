"""``xmetra`` command line: run | kshot | downsample | freeze.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""

import argparse
import sys

from xmetra.cli.config import load_config
from xmetra.cli.harness import downsample_sweep, freeze_sweep, kshot_sweep, run_experiment
from xmetra.exceptions import DivergenceError, XMetraError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

COMMANDS = {
    "run": run_experiment,
    "kshot": kshot_sweep,
    "downsample": downsample_sweep,
    "freeze": freeze_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="xmetra", description="Cross-lingual meta-transfer experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "train every configured kind for every seed",
        "kshot": "sweep the support/query shot grid",
        "downsample": "sweep fractions of the target dev pool (X-METRA-ADA vs FT)",
        "freeze": "sweep frozen encoder block sets",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", metavar="PATH", help="flat key=value config file")
        p.add_argument("--seed", type=int, metavar="N", help="master seed (overrides experiment.seed)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides experiment.out)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VAL",
                       help="set one config key; repeatable, applied after the file")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override, args.seed, args.out)
        result = COMMANDS[args.command](cfg)
    except DivergenceError as exc:
        print(f"xmetra: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except XMetraError as exc:
        if not isinstance(exc, ValueError):
            raise
        print(f"xmetra: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"xmetra: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(result['files'])} files to {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
