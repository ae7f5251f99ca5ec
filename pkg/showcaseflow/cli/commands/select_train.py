"""
`select-train`: fit the relevance model of the showcase selector.
"""

import argparse
import logging
from typing import Any, Dict

from showcaseflow.cli.dependencies import (
    RELEVANCE_CHECKPOINT,
    CommandContext,
    get_image_store,
    get_review_store,
    input_path,
)
from showcaseflow.models.enums import DataSplit, ProfileMode
from showcaseflow.services.dpp_select import RelevanceModel, profile_dim, train_relevance
from showcaseflow.services.model_manager import CheckpointMetadata, save_checkpoint
from showcaseflow.storage.repositories import InteractionRepository

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("select-train", help="Train the user-image relevance model")
    parser.add_argument("--profile-mode", choices=[m.value for m in ProfileMode], help="History modalities of the user profile")
    parser.add_argument("--epochs", type=int, help="Training epochs")
    parser.set_defaults(handler=run, overrides=overrides)


def overrides(args: argparse.Namespace) -> Dict[str, Any]:
    dpp: Dict[str, Any] = {}
    if args.profile_mode is not None:
        dpp["profile_mode"] = args.profile_mode
    if args.epochs is not None:
        dpp["epochs"] = args.epochs
    return {"dpp": dpp} if dpp else {}


def run(args: argparse.Namespace, context: CommandContext) -> Dict[str, Any]:
    config = context.config
    dpp = config.dpp
    image_store = get_image_store(context)
    review_store = get_review_store(context) if dpp.profile_mode != ProfileMode.IMG else None

    repository = InteractionRepository(input_path(context, config.paths.interactions, "interactions"))
    interactions = repository.by_split(DataSplit.TRAIN)
    logger.info(f"Training relevance model on {len(interactions)} interactions ({dpp.profile_mode.value} profiles)")

    user_dim = profile_dim(dpp.profile_mode, image_store.dim, review_store.dim if review_store else 0)
    model = RelevanceModel.from_config(dpp, user_dim, image_store.dim)
    with context.timer.stage("train"):
        history = train_relevance(model, interactions, image_store, review_store, dpp, seed=config.training.seed)

    metrics = {"final_nll": round(history[-1], 8)} if history else {}
    checkpoint = save_checkpoint(
        context.artifact(RELEVANCE_CHECKPOINT),
        model.state_dict(),
        CheckpointMetadata(
            kind="relevance-model",
            config={"dpp": dpp.model_dump(mode="json"), "user_dim": user_dim, "image_dim": image_store.dim},
            metrics=metrics,
            seed=config.training.seed,
        ),
    )
    context.record_output(checkpoint)
    summary = {"interactions": len(interactions), "nll_history": [round(v, 8) for v in history]}
    context.write_report("select_train.json", summary)
    return summary
