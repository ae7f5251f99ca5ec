"""
`evaluate`: score generated explanations against their references.
"""

import argparse
import logging
from pathlib import Path

from showcaseflow.cli.dependencies import GENERATIONS, CommandContext, get_classifier, get_image_store, get_store
from showcaseflow.core.exceptions import MissingFileError
from showcaseflow.models.enums import EmbeddingKind
from showcaseflow.models.reports import MetricReport
from showcaseflow.services.eval_metrics import (
    LexiconSentenceEmbedder,
    SentenceEmbedder,
    StoreSentenceEmbedder,
    evaluate_corpus,
)
from showcaseflow.storage.repositories import GenerationRepository

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("evaluate", help="Compute the metric report of a generations file")
    parser.add_argument("--generations", type=Path, help="Generations file (default: <out>/generations.jsonl)")
    parser.set_defaults(handler=run, overrides=lambda args: {})


def get_embedder(context: CommandContext) -> SentenceEmbedder:
    """Precomputed generated-sentence store when configured, otherwise the token lexicon."""
    paths = context.paths
    if paths.generated_sentence_store is not None:
        store = get_store(context, paths.generated_sentence_store, EmbeddingKind.SENTENCE, "generated sentence store")
        return StoreSentenceEmbedder(store)
    if paths.lexicon_store is not None:
        return LexiconSentenceEmbedder(get_store(context, paths.lexicon_store, EmbeddingKind.SENTENCE, "lexicon store"))
    raise MissingFileError("<not configured>", "sentence embedder (lexicon or generated sentence store)")


def run(args: argparse.Namespace, context: CommandContext) -> MetricReport:
    config = context.config
    path = args.generations or context.artifact(GENERATIONS)
    if not Path(path).is_file():
        raise MissingFileError(path, "generations")
    context.record_input(path)
    records = GenerationRepository(path).read_all()

    image_store = get_image_store(context)
    embedder = get_embedder(context)
    classifier = get_classifier(context, required=False)
    with context.timer.stage("evaluate"):
        report = evaluate_corpus(records, image_store, embedder, classifier, config.evaluation)
    context.write_report("metrics.json", report)
    return report
