"""
`train`: fit the explanation generator under one loss mode.
"""

import argparse
import logging
from typing import Any, Dict

from showcaseflow.cli.dependencies import (
    EXPLAINER_CHECKPOINT,
    EXPLANATION_RECORDS,
    CommandContext,
    get_image_store,
    get_review_store,
)
from showcaseflow.core.exceptions import EmptyCorpusError, MissingFileError
from showcaseflow.models.enums import DataSplit, LossMode
from showcaseflow.services.mm_model import build_model
from showcaseflow.services.model_manager import CheckpointMetadata, save_checkpoint
from showcaseflow.services.text_processor import TextProcessor, load_or_build_vocabularies
from showcaseflow.services.trainer import ExplainerTrainer
from showcaseflow.storage.repositories import ExplanationRecordRepository

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="Train the multi-modal explanation generator")
    parser.add_argument("--loss-mode", choices=[m.value for m in LossMode], help="Training objective")
    parser.add_argument("--epochs", type=int, help="Training epochs")
    parser.add_argument("--max-steps", type=int, help="Stop after this many optimization steps")
    parser.add_argument("--lambda1", type=float, help="Weight of the image-text contrastive term")
    parser.add_argument("--lambda2", type=float, help="Weight of the history-text contrastive term")
    parser.add_argument("--rebuild-vocab", action="store_true", help="Rebuild vocabularies even if present")
    parser.set_defaults(handler=run, overrides=overrides)


def overrides(args: argparse.Namespace) -> Dict[str, Any]:
    training: Dict[str, Any] = {}
    model: Dict[str, Any] = {}
    if args.loss_mode is not None:
        training["loss_mode"] = args.loss_mode
    if args.epochs is not None:
        training["epochs"] = args.epochs
    if args.max_steps is not None:
        training["max_steps"] = args.max_steps
    if args.lambda1 is not None:
        model["lambda1"] = args.lambda1
    if args.lambda2 is not None:
        model["lambda2"] = args.lambda2
    result: Dict[str, Any] = {}
    if training:
        result["training"] = training
    if model:
        result["model"] = model
    return result


def run(args: argparse.Namespace, context: CommandContext) -> Dict[str, Any]:
    config = context.config
    records_path = context.artifact(EXPLANATION_RECORDS)
    if not records_path.is_file():
        raise MissingFileError(records_path, "explanation records (run distill first)")
    context.record_input(records_path)
    records = ExplanationRecordRepository(records_path).by_split(DataSplit.TRAIN)
    if not records:
        raise EmptyCorpusError("no training explanations")

    vocabulary, entities = load_or_build_vocabularies(
        records, config.paths.vocabulary_path, config.paths.entity_vocabulary_path, rebuild=args.rebuild_vocab
    )
    context.record_output(config.paths.vocabulary_path)
    context.record_output(config.paths.entity_vocabulary_path)

    image_store = get_image_store(context)
    review_store = get_review_store(context) if config.model.use_reviews else None
    processor = TextProcessor(
        vocabulary,
        max_len=config.model.max_len,
        max_images=config.model.max_images,
        max_history=config.model.max_history,
    )
    samples = [processor.to_review_record(record) for record in records]

    model = build_model(config.model, vocabulary, image_store, review_store)
    trainer = ExplainerTrainer(
        model, image_store, review_store, vocabulary, model.config, config.training, entity_vocab=entities
    )
    logger.info(f"Training on {len(samples)} explanations with loss mode {trainer.mode.value}")
    with context.timer.stage("train"):
        history = trainer.train(samples)

    final = history[-1] if history else {}
    checkpoint = save_checkpoint(
        context.artifact(EXPLAINER_CHECKPOINT),
        model.state_dict(),
        CheckpointMetadata(
            kind="explainer",
            config=model.config.model_dump(mode="json"),
            metrics={key: value for key, value in final.items() if value is not None},
            vocab_size=len(vocabulary),
            vocab_digest=vocabulary.digest(),
            seed=config.training.seed,
        ),
    )
    context.record_output(checkpoint)
    summary = {"loss_mode": trainer.mode.value, "steps": trainer.step_count, "history": history}
    context.write_report("train.json", summary)
    return summary
