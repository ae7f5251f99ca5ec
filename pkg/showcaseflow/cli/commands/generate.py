"""
`generate`: write an explanation for every selected showcase.
"""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from showcaseflow.cli.dependencies import (
    EXPLAINER_CHECKPOINT,
    EXPLANATION_RECORDS,
    GENERATIONS,
    SHOWCASES,
    CommandContext,
    get_image_store,
    get_review_store,
    input_path,
)
from showcaseflow.config import ModelConfig
from showcaseflow.core.exceptions import MissingFileError
from showcaseflow.models.enums import EmbeddingKind
from showcaseflow.models.records import EmbeddingRef, ExplanationRecord, GeneratedSentence, GenerationRecord
from showcaseflow.services.mm_model import MultiModalExplainer, encode_ids, generate
from showcaseflow.services.model_manager import load_checkpoint, load_into
from showcaseflow.services.text_processor import TextProcessor, Vocabulary
from showcaseflow.storage.repositories import (
    ExplanationRecordRepository,
    GenerationRepository,
    InteractionRepository,
    ShowcaseRepository,
)
from showcaseflow.utils.text_utils import split_sentences

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("generate", help="Generate explanations for selected showcases")
    parser.add_argument("--checkpoint", type=Path, help="Explainer checkpoint (default: <out>/explainer.json)")
    parser.add_argument("--showcases", type=Path, help="Showcases file (default: <out>/showcases.jsonl)")
    parser.add_argument("--beam-size", type=int, help="Beam width")
    parser.set_defaults(handler=run, overrides=overrides)


def overrides(args: argparse.Namespace) -> Dict[str, Any]:
    if args.beam_size is None:
        return {}
    return {"generation": {"beam_size": args.beam_size}}


def sentence_refs(review_id: str, tokens: List[str]) -> List[GeneratedSentence]:
    """Split generated tokens into sentences with ids '<review_id>:<idx>'."""
    return [
        GeneratedSentence(tokens=sentence, ref=EmbeddingRef(id=f"{review_id}:{idx}", kind=EmbeddingKind.SENTENCE))
        for idx, sentence in enumerate(split_sentences(tokens))
    ]


def load_explainer(context: CommandContext, path: Path, vocabulary: Vocabulary) -> MultiModalExplainer:
    """
    Rebuild the explainer from its checkpoint.

    Raises:
        VocabularyMismatchError: If the checkpoint was trained on another vocabulary
    """
    _, metadata = load_checkpoint(path)
    metadata.check_vocabulary(len(vocabulary), vocabulary.digest())
    model = MultiModalExplainer(ModelConfig.model_validate(metadata.config))
    load_into(model, path)
    model.eval()
    context.record_input(path)
    return model


def run(args: argparse.Namespace, context: CommandContext) -> List[GenerationRecord]:
    config = context.config
    checkpoint = args.checkpoint or context.artifact(EXPLAINER_CHECKPOINT)
    showcases_path = args.showcases or context.artifact(SHOWCASES)
    if not Path(showcases_path).is_file():
        raise MissingFileError(showcases_path, "showcases")
    context.record_input(showcases_path)

    vocabulary = Vocabulary.load(config.paths.vocabulary_path)
    context.record_input(config.paths.vocabulary_path)
    model = load_explainer(context, checkpoint, vocabulary)
    image_store = get_image_store(context)
    review_store = get_review_store(context) if model.config.use_reviews else None

    showcases = ShowcaseRepository(showcases_path).read_all()
    interactions = {
        i.review_id: i
        for i in InteractionRepository(input_path(context, config.paths.interactions, "interactions")).iter_all()
    }
    records: Dict[str, ExplanationRecord] = {}
    records_path = context.artifact(EXPLANATION_RECORDS)
    if records_path.is_file():
        context.record_input(records_path)
        records = ExplanationRecordRepository(records_path).index()
    processor = TextProcessor(vocabulary, model.config.max_len, model.config.max_images, model.config.max_history)

    generations: List[GenerationRecord] = []
    skipped = 0
    with context.timer.stage("generate"):
        for showcase in showcases:
            if not showcase.selected:
                skipped += 1
                continue
            review_id = showcase.review_id or f"{showcase.user_id}@{showcase.business_id}"
            record: Optional[ExplanationRecord] = records.get(review_id)
            if record is not None:
                history = record.history_ids
            elif review_id in interactions:
                history = interactions[review_id].history_reviews
            else:
                history = []
            enc = encode_ids(model, showcase.selected, history, image_store, review_store)
            ids = generate(model, enc, beam_size=config.generation.beam_size, max_len=config.generation.max_len)
            tokens = vocabulary.decode(ids)
            generations.append(GenerationRecord(
                review_id=review_id,
                user_id=showcase.user_id,
                business_id=showcase.business_id,
                images=showcase.selected,
                generated=tokens,
                reference=processor.reference_tokens(record) if record is not None else [],
                keywords=processor.to_review_record(record).keywords if record is not None else {},
                sentences=sentence_refs(review_id, tokens),
            ))
    if skipped:
        logger.warning(f"Skipped {skipped} empty showcases")

    repository = GenerationRepository(context.artifact(GENERATIONS))
    repository.write_all(generations)
    context.record_output(repository.path)
    logger.info(f"Generated {len(generations)} explanations to {repository.path}")
    return generations
