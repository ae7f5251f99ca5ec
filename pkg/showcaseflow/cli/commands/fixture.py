"""
`fixture`: write a seeded synthetic dataset and a matching config file.
"""

import argparse
import logging
from typing import Any, Dict

from pydantic import ValidationError

from showcaseflow.cli.dependencies import CommandContext
from showcaseflow.core.exceptions import UsageError
from showcaseflow.services.fixture import FixtureConfig, FixtureGenerator, write_fixture

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("fixture", help="Write the synthetic benchmark dataset into --out")
    parser.add_argument("--users", type=int, help="Number of users")
    parser.add_argument("--businesses", type=int, help="Number of businesses")
    parser.add_argument("--reviews-per-user", type=int, help="Reviews written by each user")
    parser.add_argument("--pool-size", type=int, help="Images per business")
    parser.add_argument("--topics", type=int, help="Number of planted topics")
    parser.add_argument("--dim", type=int, help="Embedding width")
    parser.set_defaults(handler=run, overrides=lambda args: {})


def fixture_config(args: argparse.Namespace, seed: int) -> FixtureConfig:
    fields: Dict[str, Any] = {"seed": seed}
    for name in ("users", "businesses", "reviews_per_user", "pool_size", "topics", "dim"):
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    try:
        return FixtureConfig(**fields)
    except ValidationError as e:
        raise UsageError(f"invalid fixture settings: {e}") from e


def run(args: argparse.Namespace, context: CommandContext) -> Dict[str, Any]:
    seed = context.config.training.seed
    directory = context.paths.root
    with context.timer.stage("fabricate"):
        world = FixtureGenerator(fixture_config(args, seed)).build()
    written = write_fixture(world, directory, seed)
    for path in written.values():
        context.record_output(path)
    return {name: str(path) for name, path in written.items()}
