"""
Command-line router.

Builds the argparse parser: global flags shared by every subcommand plus
one subparser per command module.
"""

import argparse
from pathlib import Path
from typing import Any, Dict, NoReturn, Optional

from showcaseflow.cli.commands import COMMAND_MODULES
from showcaseflow.config import PipelineConfig, load_pipeline_config
from showcaseflow.core.exceptions import UsageError


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="TOML config file")
    parser.add_argument("--seed", type=int, default=default, help="Seed of every random generator")
    parser.add_argument("--out", type=Path, default=default, help="Output directory")
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default=default,
        help="Override LOG_LEVEL",
    )


def build_parser() -> CommandParser:
    parser = CommandParser(prog="showcaseflow", description="Personalized showcase selection and explanation pipeline")
    _global_flags(parser, suppress=False)
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CommandParser)
    for module in COMMAND_MODULES:
        module.register(subparsers)
    for subparser in subparsers.choices.values():
        # Global flags are accepted after the subcommand too
        _global_flags(subparser, suppress=True)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """
    Configuration for a parsed command line.

    The command's own flags override the config file, and the global
    `--seed` and `--out` override both. The fixture command has no input
    config: its `--out` directory becomes the dataset root.
    """
    overrides: Dict[str, Any] = dict(args.overrides(args))
    seed: Optional[int] = args.seed
    out: Optional[Path] = args.out

    if args.command == "fixture":
        root = (out or Path("fixture")).resolve()
        overrides["paths"] = {"root": str(root), "out_dir": "out"}
        config_path = None
    else:
        config_path = args.config
        if out is not None:
            overrides.setdefault("paths", {})["out_dir"] = str(out.resolve())
    if seed is not None:
        overrides.setdefault("training", {})["seed"] = seed
    return load_pipeline_config(config_path, overrides)
