import argparse
import logging
import sys

from src.errors import ConfigError, InvalidSpecError, LabError, PropertyFailureError, UnsupportedForwardError
from src.pipeline.run_pipeline import (
    run_epsilon_sweep,
    run_feynman_kac_check,
    run_penalization_sweep,
    run_single_solve,
    run_validation,
)
from src.pipeline.utils_config import load_experiment_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_SOLVE = 4
EXIT_SWEEP = 5
EXIT_FEYNMAN_KAC = 6
EXIT_PENALIZATION = 7

LOG_FORMAT = "[%(levelname)s] %(message)s"


def setup_logging(verbose: bool = False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool = False):
    """Flags accepted before and after the subcommand; subcommand copies must not reset them."""

    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--out", default=default(None), help="Output directory (overrides output_dir)")
    parser.add_argument("--threads", type=int, default=default(1), help="Concurrent epsilon solves")
    parser.add_argument("--seed", type=int, default=default(None), help="Seed for assumption sampling")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False), help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)

    parser = argparse.ArgumentParser(
        prog="glab",
        description="Averaging lab for reflected G-BSDEs and their obstacle PDEs",
        epilog="Global flags (--out, --threads, --seed, -v) go before or after the subcommand.",
    )
    _add_global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="Check the declared assumptions").add_argument("config")

    solve = sub.add_parser("solve", parents=[common], help="Single obstacle-PDE solve")
    solve.add_argument("config")
    mode = solve.add_mutually_exclusive_group()
    mode.add_argument("--epsilon", type=float, default=None)
    mode.add_argument("--averaged", action="store_true")

    sub.add_parser("sweep", parents=[common], help="Epsilon sweep against the averaged problem").add_argument("config")
    sub.add_parser("fk-check", parents=[common], help="Lattice vs PDE consistency check").add_argument("config")
    sub.add_parser("penalize", parents=[common], help="Penalization chain on the lattice").add_argument("config")
    return parser


def _validated(cfg) -> bool:
    report = run_validation(cfg)
    if not report.passed:
        failed = [c.name for c in report.checks if not c.passed]
        logger.error(f"❌ Assumption checks failed: {', '.join(failed)}")
    return report.passed


def run_command(args) -> int:
    try:
        cfg = load_experiment_config(args.config).with_overrides(output_dir=args.out, seed=args.seed)
    except (ConfigError, InvalidSpecError) as e:
        logger.error(f"❌ Config error: {e}")
        return EXIT_CONFIG

    if not _validated(cfg):
        return EXIT_VALIDATION
    if args.command == "validate":
        return EXIT_OK

    try:
        if args.command == "solve":
            run_single_solve(cfg, epsilon=args.epsilon, averaged=args.averaged)
            return EXIT_OK
        if args.command == "sweep":
            report = run_epsilon_sweep(cfg, threads=args.threads)
            return EXIT_OK if report.converged else EXIT_SWEEP
        if args.command == "fk-check":
            try:
                report = run_feynman_kac_check(cfg)
            except UnsupportedForwardError as e:
                logger.error(f"❌ {e}")
                return EXIT_FEYNMAN_KAC
            return EXIT_OK if report.passed else EXIT_FEYNMAN_KAC
        if args.command == "penalize":
            try:
                report = run_penalization_sweep(cfg)
            except PropertyFailureError as e:
                logger.error(f"❌ {e}")
                return EXIT_PENALIZATION
            return EXIT_OK if report.passed else EXIT_PENALIZATION
    except LabError as e:
        logger.error(f"❌ {args.command} failed: {type(e).__name__}: {e}")
        return EXIT_SOLVE
    raise AssertionError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
