"""
`select`: pick a showcase for every evaluation visit and score the picks.

Evaluation visits are the test interactions whose review survived
distillation, so selection and generation are scored on the same users.
"""

import argparse
import logging
from typing import Any, Dict, List

import numpy as np

from showcaseflow.cli.dependencies import (
    EXPLANATION_RECORDS,
    RELEVANCE_CHECKPOINT,
    SHOWCASES,
    CommandContext,
    get_image_store,
    get_review_store,
    input_path,
)
from showcaseflow.config import DppConfig
from showcaseflow.core.exceptions import EmptyCorpusError
from showcaseflow.models.enums import DataSplit, ProfileMode, SelectionMode
from showcaseflow.models.records import Interaction, Showcase
from showcaseflow.models.reports import CorpusDiversityReport, SelectionReport, as_percent
from showcaseflow.services.dpp_select import (
    RelevanceModel,
    ShowcaseSelector,
    evaluate_showcases,
    random_baseline,
    random_showcase,
)
from showcaseflow.services.eval_metrics import corpus_diversity
from showcaseflow.services.model_manager import load_checkpoint, load_into
from showcaseflow.storage.repositories import ExplanationRecordRepository, InteractionRepository, ShowcaseRepository

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("select", help="Select showcases and report P/R/F1@K and div@K")
    parser.add_argument("--mode", choices=[m.value for m in SelectionMode], help="Selection strategy")
    parser.add_argument("--k", type=int, help="Showcase size K")
    parser.set_defaults(handler=run, overrides=overrides)


def overrides(args: argparse.Namespace) -> Dict[str, Any]:
    dpp: Dict[str, Any] = {}
    if args.mode is not None:
        dpp["selection_mode"] = args.mode
    if args.k is not None:
        dpp["k"] = args.k
    return {"dpp": dpp} if dpp else {}


def evaluation_interactions(context: CommandContext, interactions: List[Interaction]) -> List[Interaction]:
    """Test interactions restricted to reviews with a distilled explanation, when one exists."""
    test = [i for i in interactions if i.split == DataSplit.TEST]
    records_path = context.artifact(EXPLANATION_RECORDS)
    if not records_path.is_file():
        logger.warning(f"No explanation records at {records_path}; selecting for every test interaction")
        return test
    context.record_input(records_path)
    explained = set(ExplanationRecordRepository(records_path).index())
    return [i for i in test if i.review_id in explained]


def load_selector(context: CommandContext, image_store, dpp: DppConfig) -> ShowcaseSelector:
    """Rebuild the relevance model from its checkpoint; the checkpoint's profile settings win."""
    path = context.artifact(RELEVANCE_CHECKPOINT)
    _, metadata = load_checkpoint(path)
    trained = DppConfig.model_validate(metadata.config["dpp"])
    dpp = dpp.model_copy(update={
        "profile_mode": trained.profile_mode,
        "user_hidden": trained.user_hidden,
        "image_hidden": trained.image_hidden,
    })
    model = RelevanceModel.from_config(dpp, int(metadata.config["user_dim"]), int(metadata.config["image_dim"]))
    load_into(model, path)
    model.eval()
    context.record_input(path)
    review_store = get_review_store(context) if dpp.profile_mode != ProfileMode.IMG else None
    return ShowcaseSelector(model, image_store, review_store, dpp)


def run(args: argparse.Namespace, context: CommandContext) -> SelectionReport:
    config = context.config
    dpp = config.dpp
    image_store = get_image_store(context)
    interactions = InteractionRepository(input_path(context, config.paths.interactions, "interactions")).read_all()
    targets = evaluation_interactions(context, interactions)

    selector = load_selector(context, image_store, dpp) if dpp.selection_mode == SelectionMode.DPP else None
    rng = np.random.default_rng(config.training.seed)
    showcases: List[Showcase] = []
    skipped = 0
    with context.timer.stage("select"):
        for interaction in targets:
            if not interaction.candidates:
                skipped += 1
                continue
            if selector is not None:
                showcases.append(selector.select(interaction, dpp.k))
            else:
                showcases.append(random_showcase(interaction, dpp.k, rng))
    if skipped:
        logger.warning(f"Skipped {skipped} users with an empty candidate pool")
    if not showcases:
        raise EmptyCorpusError("no interaction to select showcases for")

    repository = ShowcaseRepository(context.artifact(SHOWCASES))
    repository.write_all(showcases)
    context.record_output(repository.path)

    with context.timer.stage("evaluate"):
        model_report = evaluate_showcases(showcases, targets, image_store, dpp.k)
        baseline = random_baseline(targets, image_store, dpp.k, trials=dpp.random_trials, seed=config.training.seed)
        raw = corpus_diversity(
            (i.business_id, i.user_id, image_store.vectors(i.ground_truth)) for i in interactions
        )
        diversity = CorpusDiversityReport(**{key: as_percent(value) for key, value in raw.model_dump().items()})

    report = SelectionReport(
        mode=dpp.selection_mode.value,
        profile_mode=(selector.config.profile_mode if selector else dpp.profile_mode).value,
        k=dpp.k,
        model=model_report,
        random_baseline=baseline,
        dataset_diversity=diversity,
        skipped_users=skipped,
    )
    logger.info(
        f"Selection F1@{dpp.k}={model_report.f1} (random {baseline.f1}), div@{dpp.k}={model_report.diversity}"
    )
    context.write_report("selection.json", report)
    return report
