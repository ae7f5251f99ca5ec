"""
Dataset and artifact records.

This module defines Pydantic models for every JSON-lines file the
pipeline reads or writes: raw reviews, annotated alignment pairs,
distilled explanations, selection interactions, showcases and
generations.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from showcaseflow.models.enums import DataSplit, EmbeddingKind


class EmbeddingRef(BaseModel):
    """Reference to one row of an embedding store of a given kind."""
    id: str = Field(..., min_length=1)
    kind: EmbeddingKind

    model_config = {"frozen": True}


class EntitySpan(BaseModel):
    """Half-open token span [start, end) of an entity mention in a target."""
    start: int = Field(..., ge=0)
    end: int = Field(..., ge=1)
    entity: str = Field(..., min_length=1)

    @model_validator(mode="after")
    def validate_order(self) -> "EntitySpan":
        if self.end <= self.start:
            raise ValueError("entity span must satisfy start < end")
        return self


class ReviewSentence(BaseModel):
    """One pre-segmented sentence of a raw review."""
    sentence_id: str = Field(..., description="Row id in the sentence embedding store")
    text: str
    entities: List[str] = Field(default_factory=list, description="Entity strings mentioned in the sentence")
    keywords: Dict[str, List[str]] = Field(
        default_factory=dict,
        description="Keyword class -> annotated keyword tokens"
    )


class RawReview(BaseModel):
    """A user-business review as it arrives before distillation."""
    review_id: str
    user_id: str
    business_id: str
    split: DataSplit = DataSplit.TRAIN
    sentences: List[ReviewSentence]
    image_ids: List[str] = Field(default_factory=list)


class AlignedPair(BaseModel):
    """Annotated sentence-image pair; label 1 means the sentence describes the image."""
    sentence_id: str
    image_id: str
    label: int = Field(..., ge=0, le=1)

    @property
    def sentence(self) -> EmbeddingRef:
        return EmbeddingRef(id=self.sentence_id, kind=EmbeddingKind.SENTENCE)

    @property
    def image(self) -> EmbeddingRef:
        return EmbeddingRef(id=self.image_id, kind=EmbeddingKind.IMAGE)


class ExplanationPair(BaseModel):
    """A distilled (sentence, image) explanation pair."""
    review_id: str
    sentence_idx: int = Field(..., ge=0)
    image_id: str
    score: float = Field(..., gt=0.0, lt=1.0)


class ExplanationRecord(BaseModel):
    """
    A review reduced to its distilled explanation, in text form.

    The generator tokenizes `sentences` into its target sequence.
    """
    review_id: str
    user_id: str
    business_id: str
    split: DataSplit
    sentences: List[ReviewSentence] = Field(..., min_length=1)
    image_ids: List[str] = Field(..., min_length=1)
    history_ids: List[str] = Field(default_factory=list, description="Review-text ids of the user's other reviews")

    @property
    def text(self) -> str:
        return " ".join(sentence.text for sentence in self.sentences)


class ReviewRecord(BaseModel):
    """Tokenized training sample of the explanation generator."""
    review_id: str
    user_id: str
    business_id: str
    history: List[str] = Field(default_factory=list, max_length=10)
    images: List[str] = Field(..., min_length=1, max_length=5)
    target: List[int] = Field(..., max_length=64)
    entity_spans: List[EntitySpan] = Field(default_factory=list)
    keywords: Dict[str, List[str]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_spans(self) -> "ReviewRecord":
        previous_end = 0
        for span in sorted(self.entity_spans, key=lambda s: s.start):
            if span.end > len(self.target):
                raise ValueError("entity span out of range")
            if span.start < previous_end:
                raise ValueError("entity spans overlap")
            previous_end = span.end
        return self

    @property
    def history_refs(self) -> List[EmbeddingRef]:
        return [EmbeddingRef(id=i, kind=EmbeddingKind.REVIEW_TEXT) for i in self.history]

    @property
    def image_refs(self) -> List[EmbeddingRef]:
        return [EmbeddingRef(id=i, kind=EmbeddingKind.IMAGE) for i in self.images]


class Interaction(BaseModel):
    """A user-business visit with the business image pool and the user's own images."""
    review_id: str
    user_id: str
    business_id: str
    split: DataSplit = DataSplit.TRAIN
    candidates: List[str] = Field(default_factory=list, description="Image pool of the business")
    ground_truth: List[str] = Field(default_factory=list, description="Images attached to the user's review")
    history_images: List[str] = Field(default_factory=list)
    history_reviews: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_ground_truth(self) -> "Interaction":
        pool = set(self.candidates)
        missing = [i for i in self.ground_truth if i not in pool]
        if missing:
            raise ValueError(f"ground-truth images not in pool: {missing}")
        return self


class Showcase(BaseModel):
    """Images selected for a user at a business, in selection order."""
    user_id: str
    business_id: str
    review_id: Optional[str] = None
    selected: List[str] = Field(default_factory=list)
    k: int = Field(3, ge=1)

    @field_validator("selected")
    @classmethod
    def validate_unique(cls, v: List[str]) -> List[str]:
        if len(set(v)) != len(v):
            raise ValueError("showcase images must be unique")
        return v

    @model_validator(mode="after")
    def validate_size(self) -> "Showcase":
        if len(self.selected) > self.k:
            raise ValueError("showcase holds more than K images")
        return self


class GeneratedSentence(BaseModel):
    """One sentence of a generated explanation and its embedding reference."""
    tokens: List[str]
    ref: EmbeddingRef


class GenerationRecord(BaseModel):
    """A generated explanation paired with its inputs and reference."""
    review_id: str
    user_id: str
    business_id: str
    images: List[str]
    generated: List[str] = Field(default_factory=list, max_length=64)
    reference: List[str] = Field(default_factory=list)
    keywords: Dict[str, List[str]] = Field(default_factory=dict, description="Reference keywords per class")
    sentences: List[GeneratedSentence] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_sentences(self) -> "GenerationRecord":
        if self.sentences:
            rebuilt = [token for sentence in self.sentences for token in sentence.tokens]
            if rebuilt != self.generated:
                raise ValueError("sentence splits must reassemble to the generated text")
        return self

    @property
    def image_refs(self) -> List[EmbeddingRef]:
        return [EmbeddingRef(id=i, kind=EmbeddingKind.IMAGE) for i in self.images]


