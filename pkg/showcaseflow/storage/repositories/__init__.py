from showcaseflow.storage.repositories.base import JsonlRepository, PydanticJsonlRepository
from showcaseflow.storage.repositories.record_repository import (
    AlignedPairRepository,
    ExplanationPairRepository,
    ExplanationRecordRepository,
    GenerationRepository,
    InteractionRepository,
    ReviewRepository,
    ShowcaseRepository,
)

__all__ = [
    "JsonlRepository",
    "PydanticJsonlRepository",
    "AlignedPairRepository",
    "ExplanationPairRepository",
    "ExplanationRecordRepository",
    "GenerationRepository",
    "InteractionRepository",
    "ReviewRepository",
    "ShowcaseRepository",
]
