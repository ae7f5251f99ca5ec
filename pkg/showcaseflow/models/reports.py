"""
Report models for ShowcaseFlow commands.

This module defines Pydantic models for the JSON reports each command
emits: classifier quality, image selection quality, text metrics and
the run manifest written next to every set of artifacts.
"""

from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_serializer


def as_percent(value: Optional[float]) -> Optional[float]:
    """Scale a [0, 1] metric to a percentage rounded to 2 decimals."""
    if value is None:
        return None
    return round(100.0 * float(value), 2)


class ClassifierReport(BaseModel):
    """Alignment classifier quality on one partition."""
    split: str = Field(..., description="Partition the metrics were measured on")
    auc: float = Field(..., ge=0.0, le=1.0)
    f1: float = Field(..., ge=0.0, le=1.0)
    size: int = Field(..., ge=0)


class DistillReport(BaseModel):
    """Summary of a distillation run."""
    classifier: List[ClassifierReport]
    threshold: float
    reviews_total: int
    reviews_kept: int
    pairs_kept: int
    loss_history: List[float] = Field(default_factory=list)


class RankingReport(BaseModel):
    """Precision/recall/F1@K and div@K, in percent."""
    precision: float
    recall: float
    f1: float
    diversity: Optional[float] = Field(None, description="div@K; None when no showcase had 2+ images")
    users: int = Field(..., ge=0)


class CorpusDiversityReport(BaseModel):
    """Visual diversity of a dataset at three levels; None marks an undefined level."""
    intra_business: Optional[float] = None
    inter_user: Optional[float] = None
    intra_user: Optional[float] = None


class SelectionReport(BaseModel):
    """Summary of a showcase selection run."""
    mode: str
    profile_mode: str
    k: int
    model: RankingReport
    random_baseline: Optional[RankingReport] = None
    dataset_diversity: CorpusDiversityReport
    skipped_users: int = 0


class TextMetrics(BaseModel):
    """Corpus-level text metrics, in percent unless noted."""
    bleu1: Optional[float] = None
    bleu4: Optional[float] = None
    nist4: Optional[float] = None
    distinct1: Optional[float] = None
    distinct2: Optional[float] = None
    clip_align: Optional[float] = None
    clip_score: Optional[float] = None
    keyword_coverage: Dict[str, Optional[float]] = Field(default_factory=dict)
    length_histogram: List[int] = Field(default_factory=list, description="Counts, not percent")


class MetricReport(TextMetrics):
    """
    Full evaluation report for a generated corpus.

    `reference` holds the diversity and embedding metrics of the
    reference corpus itself, which have no n-gram scores.
    """
    records: int = Field(..., ge=0)
    reference: Optional[TextMetrics] = None


class RunManifest(BaseModel):
    """Provenance record emitted for every command."""
    command: str
    config: Dict[str, Any]
    inputs: Dict[str, str] = Field(default_factory=dict, description="Input path -> SHA-256")
    outputs: Dict[str, str] = Field(default_factory=dict, description="Output path -> SHA-256")
    started_at: datetime
    finished_at: Optional[datetime] = None
    timings: Dict[str, float] = Field(default_factory=dict, description="Stage name -> seconds")

    @field_serializer("started_at", "finished_at", when_used="json")
    def serialize_dt_to_json(self, dt: Optional[datetime]) -> Optional[str]:
        return dt.isoformat() if dt else None
