"""
Repositories for the pipeline's JSON-lines datasets and artifacts.
"""

import logging
from collections import defaultdict
from typing import Dict, List, Sequence

from showcaseflow.core.exceptions import DuplicateIdError
from showcaseflow.models.enums import DataSplit
from showcaseflow.models.records import (
    AlignedPair,
    ExplanationPair,
    ExplanationRecord,
    GenerationRecord,
    Interaction,
    RawReview,
    Showcase,
)
from showcaseflow.storage.repositories.base import PydanticJsonlRepository

logger = logging.getLogger(__name__)


class ReviewRepository(PydanticJsonlRepository[RawReview]):
    """Raw reviews with sentences and attached images."""
    model_class = RawReview
    what = "reviews"

    def read_unique(self) -> List[RawReview]:
        """
        Read all reviews, refusing repeated review ids.

        Raises:
            DuplicateIdError: If a review id appears twice
        """
        reviews = self.read_all()
        _check_unique([r.review_id for r in reviews], "review")
        return reviews


class AlignedPairRepository(PydanticJsonlRepository[AlignedPair]):
    """Annotated sentence-image pairs for the alignment classifier."""
    model_class = AlignedPair
    what = "annotated pairs"


class ExplanationPairRepository(PydanticJsonlRepository[ExplanationPair]):
    """Distilled (sentence, image) pairs with classifier scores."""
    model_class = ExplanationPair
    what = "explanation pairs"


class ExplanationRecordRepository(PydanticJsonlRepository[ExplanationRecord]):
    """Distilled explanation corpus, one record per kept review."""
    model_class = ExplanationRecord
    what = "explanation records"

    def by_split(self, split: DataSplit) -> List[ExplanationRecord]:
        return self.find(lambda record: record.split == split)

    def index(self) -> Dict[str, ExplanationRecord]:
        records = self.read_all()
        _check_unique([r.review_id for r in records], "explanation record")
        return {r.review_id: r for r in records}


class InteractionRepository(PydanticJsonlRepository[Interaction]):
    """User-business visits with candidate pools and ground-truth images."""
    model_class = Interaction
    what = "interactions"

    def by_split(self, split: DataSplit) -> List[Interaction]:
        return self.find(lambda interaction: interaction.split == split)

    def by_business(self) -> Dict[str, List[Interaction]]:
        """Interactions grouped by business id, businesses in sorted order."""
        grouped: Dict[str, List[Interaction]] = defaultdict(list)
        for interaction in self.iter_all():
            grouped[interaction.business_id].append(interaction)
        return {key: grouped[key] for key in sorted(grouped)}


class ShowcaseRepository(PydanticJsonlRepository[Showcase]):
    """Selected image sets, one per user-business pair."""
    model_class = Showcase
    what = "showcases"


class GenerationRepository(PydanticJsonlRepository[GenerationRecord]):
    """Generated explanations with their references."""
    model_class = GenerationRecord
    what = "generations"


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for item in ids:
        if item in seen:
            raise DuplicateIdError(f"duplicate {what} id: {item}")
        seen.add(item)
