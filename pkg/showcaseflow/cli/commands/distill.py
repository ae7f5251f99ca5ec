"""
`distill`: train the alignment classifier and distill the explanation corpus.
"""

import argparse
import logging
from typing import Any, Dict, List

from showcaseflow.cli.dependencies import (
    CLASSIFIER_CHECKPOINT,
    EXPLANATION_PAIRS,
    EXPLANATION_RECORDS,
    CommandContext,
    get_image_store,
    get_review_store,
    get_sentence_store,
    input_path,
)
from showcaseflow.core.exceptions import DegenerateLabelsError
from showcaseflow.models.reports import ClassifierReport, DistillReport
from showcaseflow.services.distill import distill_corpus, eval_classifier, split_pairs, train_classifier
from showcaseflow.services.model_manager import CheckpointMetadata, save_checkpoint
from showcaseflow.storage.repositories import (
    AlignedPairRepository,
    ExplanationPairRepository,
    ExplanationRecordRepository,
    ReviewRepository,
)

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("distill", help="Train the alignment classifier and distill explanations")
    parser.add_argument("--threshold", type=float, help="Keep pairs scoring at or above this confidence")
    parser.set_defaults(handler=run, overrides=overrides)


def overrides(args: argparse.Namespace) -> Dict[str, Any]:
    if args.threshold is None:
        return {}
    return {"distill": {"threshold": args.threshold}}


def run(args: argparse.Namespace, context: CommandContext) -> DistillReport:
    config = context.config
    image_store = get_image_store(context)
    sentence_store = get_sentence_store(context)
    review_store = get_review_store(context) if config.paths.resolve(config.paths.review_store).is_file() else None

    pairs = AlignedPairRepository(input_path(context, config.paths.annotated_pairs, "annotated pairs")).read_all()
    reviews = ReviewRepository(input_path(context, config.paths.reviews, "reviews")).read_unique()

    with context.timer.stage("classifier"):
        train, validation, test = split_pairs(pairs, config.distill.split, seed=config.training.seed)
        classifier = train_classifier(
            train, sentence_store, image_store,
            epochs=config.distill.epochs, lr=config.distill.lr, seed=config.training.seed,
        )
        reports: List[ClassifierReport] = []
        for name, part in (("validation", validation), ("test", test)):
            try:
                reports.append(eval_classifier(classifier, part, sentence_store, image_store, split=name))
            except DegenerateLabelsError:
                logger.warning(f"Skipping classifier metrics on the {name} partition: it holds a single class")
        for report in reports:
            logger.info(f"Classifier {report.split}: AUC={report.auc:.4f} F1={report.f1:.4f} (n={report.size})")

    checkpoint = save_checkpoint(
        context.artifact(CLASSIFIER_CHECKPOINT),
        classifier.parameters(),
        CheckpointMetadata(
            kind="alignment-classifier",
            config=config.distill.model_dump(mode="json"),
            metrics={f"{r.split}_auc": r.auc for r in reports},
            seed=config.training.seed,
        ),
    )
    context.record_output(checkpoint)

    with context.timer.stage("distill"):
        kept_pairs, records = distill_corpus(
            reviews,
            config.distill.threshold,
            classifier,
            sentence_store,
            image_store,
            review_store=review_store,
            max_images=config.model.max_images,
            max_history=config.model.max_history,
        )

    pair_repo = ExplanationPairRepository(context.artifact(EXPLANATION_PAIRS))
    record_repo = ExplanationRecordRepository(context.artifact(EXPLANATION_RECORDS))
    pair_repo.write_all(kept_pairs)
    record_repo.write_all(records)
    context.record_output(pair_repo.path)
    context.record_output(record_repo.path)

    report = DistillReport(
        classifier=reports,
        threshold=config.distill.threshold,
        reviews_total=len(reviews),
        reviews_kept=len(records),
        pairs_kept=len(kept_pairs),
        loss_history=[round(v, 8) for v in classifier.loss_history],
    )
    context.write_report("distill.json", report)
    return report
