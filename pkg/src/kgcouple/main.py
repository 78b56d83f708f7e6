import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import kgcouple_logging
from .config import THREADS_ENV_VAR, __version__
from .errors import ConditionFailure, KgcoupleError
from .experiment_config import EXPERIMENTS
from .experiment_output import RUN_LOG_FILE
from .experiment_processor import ExperimentProcessor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONDITION = 2


def _setup_failure(package_logger: logging.Logger, log_dir: Optional[str], error: Exception) -> int:
    """Report an error raised before the experiment starts, into log_dir's run log when there is one."""
    attached = False
    if log_dir:
        try:
            kgcouple_logging.configure_logging(package_logger, log_file=Path(log_dir) / RUN_LOG_FILE)
            attached = True
        except OSError as e:
            logger.warning(f"Could not open a run log in {log_dir}: {e}")
    try:
        logger.error(f"Could not set up the run: {type(error).__name__}: {error}")
    finally:
        if attached:
            kgcouple_logging.configure_logging(package_logger)
    print(f"Error: {error}", file=sys.stderr)
    return EXIT_ERROR


def run(
    experiment: Optional[str] = None,
    config_path: Optional[str] = None,
    out_dir: Optional[str] = None,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    quiet: bool = False,
) -> int:
    """
    Run one experiment and write its artifacts.

    Args:
        experiment: Experiment name; defaults to the configured EXPERIMENT.
        config_path: Path to a custom config file.
        out_dir: Artifact directory; defaults to the configured OUTPUT_DIR.
        seed: Overrides the configured SEED.
        threads: Overrides KGCOUPLE_THREADS for this run.
        quiet: If True, suppress user-facing output.

    Returns:
        Exit code: 0 on success, 2 when a required model condition fails, 1 on any other error.
    """
    if threads is not None:
        if threads < 1:
            print(f"Error: --threads must be positive, got {threads}", file=sys.stderr)
            return EXIT_ERROR
        os.environ[THREADS_ENV_VAR] = str(threads)

    package_logger = logging.getLogger("kgcouple")
    try:
        processor = ExperimentProcessor.from_path(
            config_path, experiment=experiment, out_dir=out_dir, seed=seed, quiet=quiet
        )
    except (KgcoupleError, ValueError) as e:
        return _setup_failure(package_logger, out_dir, e)

    # Keep the console handlers, add the run log inside the artifact directory
    try:
        processor.output.prepare()
        kgcouple_logging.configure_logging(package_logger, log_file=Path(processor.output.out_dir) / RUN_LOG_FILE)
    except (KgcoupleError, ValueError, OSError) as e:
        return _setup_failure(package_logger, None, e)
    logger.info(f"kgcouple {__version__}: experiment={processor.config.experiment} seed={processor.config.seed}")

    try:
        processor.run()
    except ConditionFailure as e:
        logger.error(f"Condition check failed: {e}")
        print(f"Condition failure: {e}", file=sys.stderr)
        return EXIT_CONDITION
    except (KgcoupleError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        print(f"Unexpected error: {e}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        kgcouple_logging.configure_logging(package_logger)
    if not quiet:
        print(f"Artifacts written to {processor.output.out_dir}")
    return EXIT_OK


def main():
    """Command-line interface for kgcouple."""
    parser = argparse.ArgumentParser(
        description="Spectral simulation and verification of a Klein-Gordon field coupled to a harmonic particle."
    )
    parser.add_argument(
        "experiment",
        nargs="?",
        choices=EXPERIMENTS,
        help="Experiment to run (default: EXPERIMENT from the config)",
    )
    parser.add_argument(
        "--config",
        help="Path to a custom config file",
    )
    parser.add_argument(
        "--out",
        help="Output directory for artifacts (default: OUTPUT_DIR from the config)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="Override the base random seed",
    )
    parser.add_argument(
        "--threads",
        type=int,
        help=f"Worker threads for transforms and ensembles (overrides {THREADS_ENV_VAR})",
    )
    parser.add_argument(
        "--init",
        action="store_true",
        help="Initialize a local config.yaml",
    )
    parser.add_argument(
        "--force",
        action="store_true",
        help="Overwrite existing config file with --init",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Increase verbosity: -v for INFO, -vv for DEBUG",
    )
    parser.add_argument(
        "-q",
        "--quiet",
        action="store_true",
        help="Suppress user-facing output",
    )
    parser.add_argument(
        "--version",
        action="version",
        help="Show version and exit",
        version=f"kgcouple {__version__}",
    )

    args = parser.parse_args()

    LEVEL_MAP = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}
    logging_level = LEVEL_MAP.get(min(args.verbose, 2), logging.WARNING)

    kgcouple_logger = logging.getLogger("kgcouple")
    kgcouple_logging.configure_logging(kgcouple_logger, level=logging_level)
    logging.getLogger("dynaconf").setLevel(logging.CRITICAL)
    logger.debug("args are: %s", args)

    if args.init:
        try:
            ExperimentProcessor.init_config(config_path=args.config, force=args.force, quiet=args.quiet)
        except SystemExit as e:
            sys.exit(e.code)
        return

    sys.exit(
        run(
            experiment=args.experiment,
            config_path=args.config,
            out_dir=args.out,
            seed=args.seed,
            threads=args.threads,
            quiet=args.quiet,
        )
    )


if __name__ == "__main__":
    main()
