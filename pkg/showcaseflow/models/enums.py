"""
Enumeration types used throughout the application.

This module defines standardized enums to ensure consistent
values are used for categorical data across the pipeline.
"""

from enum import Enum


class EmbeddingKind(str, Enum):
    """Kind of vectors held by an embedding store."""
    IMAGE = "image"
    REVIEW_TEXT = "review-text"
    SENTENCE = "sentence"
    USER_PROFILE = "user-profile"


class LossMode(str, Enum):
    """
    Training objectives for the explanation generator.

    Each mode pairs an image-text term with a history-text term:
    CE_CL uses vanilla contrast for both, CE_CCL swaps the image term for
    the entity-aware variant, CE_PCL swaps the history term for the
    history-weighted variant and CE_CCL_PCL uses both.
    """
    CE = "ce"
    CE_CL = "ce+cl"
    CE_CCL = "ce+ccl"
    CE_PCL = "ce+pcl"
    CE_CCL_PCL = "ce+ccl+pcl"

    @property
    def contrastive(self) -> bool:
        return self is not LossMode.CE

    @property
    def uses_entity_negatives(self) -> bool:
        return self in (LossMode.CE_CCL, LossMode.CE_CCL_PCL)

    @property
    def uses_history_weights(self) -> bool:
        return self in (LossMode.CE_PCL, LossMode.CE_CCL_PCL)


class ProfileMode(str, Enum):
    """Which user history modalities feed the user profile feature."""
    IMG = "img"
    TEXT = "text"
    IMG_TEXT = "img+text"


class SelectionMode(str, Enum):
    """How showcase images are picked from a business pool."""
    DPP = "dpp"
    RANDOM = "random"


class KeywordClass(str, Enum):
    """Keyword classes annotated on reference explanations."""
    NOUN = "noun"
    ADJ = "adj"
    ADV = "adv"


class DataSplit(str, Enum):
    """Dataset partitions."""
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"
