# app/main.py
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from app.core.config import settings
from app.core.errors import OrdinalError
from app.core.logging import get_logger, setup_logging

logger = get_logger("cli")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


# --- argument parsing ---

def _seed_list(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condor-ordinal",
        description="Ordinal regression heads (CONDOR, CORAL, categorical): benchmarks and property checks",
    )
    parser.add_argument("--log-level", default=None, help=f"default {settings.LOG_LEVEL}")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.SERVICE_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate heads over several seeds")
    run.add_argument("--config", type=Path, help="TOML experiment file; flags override its values")
    run.add_argument("--dataset", choices=["quadrants", "mnist"])
    run.add_argument("--head", nargs="+", metavar="NAME",
                     help="condor, condor-wbce, coral, categorical or all")
    run.add_argument("--seeds", type=_seed_list, help="comma-separated, e.g. 0,1,2")
    run.add_argument("--epochs", type=int, help="max epochs")
    run.add_argument("--patience", type=int)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--out", type=Path, help=f"output directory (default {settings.RESULTS_DIR})")
    run.add_argument("--mnist-full", action="store_true", default=None,
                     help="use all 60K/10K MNIST images instead of the 10K/2K subset")
    run.add_argument("--save-checkpoints", action="store_true", default=None)
    run.add_argument("--check", action="store_true",
                     help="evaluate the expected orderings and fail when one does not hold")

    verify = sub.add_parser("verify", help="run property suites")
    verify.add_argument("suites", nargs="*", default=["all"],
                        help="consistency, likelihood, gradcheck, coral-witness, reconstruction, expressiveness, all")

    export = sub.add_parser("export", help="re-render a per-seed CSV as a summary table")
    export.add_argument("--input", type=Path, required=True)
    export.add_argument("--format", choices=["csv", "markdown"], default="markdown")
    export.add_argument("--out", type=Path, required=True)

    fetch = sub.add_parser("fetch-mnist", help="download and verify the MNIST IDX files")
    fetch.add_argument("--dest", type=Path, help=f"default {settings.mnist_dir}")
    fetch.add_argument("--force", action="store_true")
    return parser


def run_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """CLI flags as ExperimentConfig fields; None marks a flag that was not given"""
    return {
        "dataset": args.dataset,
        "heads": args.head,
        "seeds": args.seeds,
        "out": args.out,
        "mnist_full": args.mnist_full,
        "save_checkpoints": args.save_checkpoints,
        "train": {
            "max_epochs": args.epochs,
            "patience": args.patience,
            "batch_size": args.batch_size,
        },
    }


# --- commands ---

def cmd_run(args: argparse.Namespace) -> int:
    from app.servies.benchmark_service import benchmark_service, build_config, markdown_table

    config = build_config(args.config, run_overrides(args))
    result = benchmark_service.run(config)
    print(markdown_table(result.reports, config.dataset))
    for name, path in result.files.items():
        print(f"{name}: {path}")

    if not args.check:
        return EXIT_OK
    failed = 0
    for expectation in benchmark_service.check(result):
        status = "PASS" if expectation.passed else ("FAIL" if expectation.gating else "INFO")
        print(f"[{status}] {expectation.name}: {expectation.detail}")
        if expectation.gating and not expectation.passed:
            failed += 1
    return EXIT_FAILED if failed else EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    from app.servies.verification_service import verification_service

    results = verification_service.run(args.suites)
    print(verification_service.format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def cmd_export(args: argparse.Namespace) -> int:
    from app.servies.benchmark_service import benchmark_service

    path = benchmark_service.export(args.input, args.format, args.out)
    print(path)
    return EXIT_OK


def cmd_fetch_mnist(args: argparse.Namespace) -> int:
    from app.mnist_client import fetch_mnist

    for path in fetch_mnist(args.dest, force=args.force):
        print(path)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "export": cmd_export,
    "fetch-mnist": cmd_fetch_mnist,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    logger.info("Starting %s v%s: %s", settings.SERVICE_NAME, settings.SERVICE_VERSION, args.command)
    try:
        return COMMANDS[args.command](args)
    except OrdinalError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, RuntimeError) as e:
        logger.exception("Command failed")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
