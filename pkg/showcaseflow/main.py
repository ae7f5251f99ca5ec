import logging
import sys
from typing import List, Optional

from showcaseflow.cli.dependencies import CommandContext
from showcaseflow.cli.router import build_parser, resolve_config
from showcaseflow.config import settings
from showcaseflow.core.exceptions import ShowcaseError, UsageError
from showcaseflow.core.logging import setup_logging
from showcaseflow.services.diffmath import seed_everything

# Set up logging configuration
logger = logging.getLogger(__name__)


def run_command(argv: Optional[List[str]] = None) -> CommandContext:
    """
    Parse `argv`, run the selected command and write its manifest.

    Returns:
        The finished command context

    Raises:
        ShowcaseError: Whatever the command raises
    """
    args = build_parser().parse_args(argv)
    setup_logging(getattr(args, "log_level", None) or settings.LOG_LEVEL.value, settings.LOG_FILE)
    config = resolve_config(args)
    seed_everything(config.training.seed, settings.DETERMINISTIC, settings.NUM_THREADS)

    context = CommandContext(args.command, config)
    logger.info(f"Running {args.command} (seed {config.training.seed}, output {config.paths.output_dir})")
    args.handler(args, context)
    context.write_manifest()
    logger.info(f"{args.command} finished in {sum(context.timer.timings.values()):.2f}s")
    return context


def main(argv: Optional[List[str]] = None) -> int:
    """
    Process entry point: map ShowcaseError families to exit codes.

    0 success, 1 usage, 2 data error, 3 numerical failure.
    """
    try:
        run_command(argv)
    except UsageError as e:
        print(e.detail, file=sys.stderr)
        return e.exit_code
    except ShowcaseError as e:
        logger.error(f"{type(e).__name__}: {e.detail}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
