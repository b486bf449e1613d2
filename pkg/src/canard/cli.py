"""Command-line entry point: ``canard <command> --config <path>``.

Exit codes: 0 ok, 1 usage or config error, 2 degenerate classification,
3 verification failed, 4 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, harness
from .errors import CanardError, ConfigError, DegenerateClassification


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(harness.EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_path(value: str) -> Path:
    # bare names resolve to the bundled examples, e.g. --config fast_predator_a
    p = Path(value)
    if not p.exists():
        bundled = harness.bundled_examples()
        if value in bundled:
            return bundled[value]
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="canard", description=(
        "Classify, analyze, simulate and verify stability switches in "
        "x' = x(A + Bx + Cy), eps y' = y(D + Ey + Fx)."))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "classify": "print the case label",
        "analyze": "crossing time, exit time and the sampled entry-exit function",
        "simulate": "integrate the full system at one epsilon",
        "sweep": "observed vs predicted switch time over the configured epsilons",
        "verify": "assumption checks, oracle cross-checks and comparison bounds",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=_config_path,
                       help="JSON config file, or the name of a bundled example")
        p.add_argument("--epsilon", type=float, default=None,
                       help="singular perturbation parameter (simulate only)")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    sub.add_parser("examples", help="list the bundled example configs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "examples":
        for name, path in harness.bundled_examples().items():
            print(f"{name}\t{path}")
        return harness.EXIT_OK

    try:
        cfg = harness.load_config(args.config)
        if args.epsilon is not None and args.command != "simulate":
            raise harness.UsageError("--epsilon only applies to simulate")
        if args.command == "simulate":
            result = harness.cmd_simulate(cfg, args.epsilon)
        else:
            result = harness.COMMANDS[args.command](cfg)
        result.write(args.out or cfg.output_dir)
    except (ConfigError, harness.UsageError) as exc:
        print(f"canard: {exc}", file=sys.stderr)
        return harness.EXIT_USAGE
    except DegenerateClassification as exc:
        print(f"canard: degenerate classification: {exc}", file=sys.stderr)
        return harness.EXIT_DEGENERATE
    except CanardError as exc:
        print(f"canard: {type(exc).__name__}: {exc}", file=sys.stderr)
        return harness.EXIT_RUNTIME
    except Exception as exc:  # never let a traceback be the interface
        print(f"canard: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return harness.EXIT_RUNTIME

    stream = sys.stdout if result.exit_code == harness.EXIT_OK else sys.stderr
    print(result.message, file=stream)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
