"""
Contrastive objectives of the explanation generator.

Projection heads pool encoder and decoder states into a shared space.
Three InfoNCE variants are built on top: vanilla contrast, a cross-modal
variant with an entity-swapped hard negative per sample, and a
personalized variant that down-weights negatives whose users have
similar histories. `total_loss` mixes them with cross-entropy.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from showcaseflow.core.exceptions import NumericalError, ShapeMismatchError, UsageError
from showcaseflow.models.enums import LossMode
from showcaseflow.models.records import EntitySpan
from showcaseflow.services import diffmath

logger = logging.getLogger(__name__)

Token = TypeVar("Token")
SpanLike = Union[EntitySpan, Tuple[int, int, str]]


class ProjectionHead(nn.Module):
    """Masked mean pooling followed by FC -> ReLU -> FC."""

    def __init__(self, hidden: int, proj_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(hidden, hidden)
        self.fc2 = nn.Linear(hidden, proj_dim)

    def forward(self, states: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Args:
            states: (B, N, hidden)
            mask: (B, N) True for positions to pool, or None for all

        Returns:
            (B, proj_dim)
        """
        pooled = diffmath.mean_pool(states, axis=1, mask=mask)
        return self.fc2(diffmath.relu(self.fc1(pooled)))


@dataclass
class ProjectedBatch:
    """
    Projected representations of one batch.

    `review` only holds rows for samples with at least one history review;
    `review_index` lists those rows. `entity` is present iff entity
    negatives were built, and `entity_present` marks the rows that have one.
    """
    image: torch.Tensor
    text: torch.Tensor
    review: Optional[torch.Tensor] = None
    review_index: Optional[torch.Tensor] = None
    entity: Optional[torch.Tensor] = None
    entity_present: Optional[torch.Tensor] = None
    history_means: Optional[torch.Tensor] = None


def project(
    model: nn.Module,
    H_V: torch.Tensor,
    image_mask: torch.Tensor,
    H_R: torch.Tensor,
    review_mask: torch.Tensor,
    H_Y: torch.Tensor,
    text_mask: torch.Tensor,
    history_means: Optional[torch.Tensor] = None,
    H_ent: Optional[torch.Tensor] = None,
    entity_mask: Optional[torch.Tensor] = None,
    entity_present: Optional[torch.Tensor] = None,
) -> ProjectedBatch:
    """
    Pool and project each modality with its own head.

    `model` must provide `image_head`, `review_head` and `text_head`. The
    entity-corrupted targets go through the text head.
    """
    image = model.image_head(H_V, image_mask)
    text = model.text_head(H_Y, text_mask)

    review = review_index = None
    if H_R.shape[1] > 0:
        has_history = review_mask.any(dim=1)
        if has_history.any():
            review_index = torch.nonzero(has_history, as_tuple=False).reshape(-1)
            review = model.review_head(H_R[review_index], review_mask[review_index])

    entity = None
    if H_ent is not None:
        if entity_present is None:
            entity_present = torch.ones(H_ent.shape[0], dtype=torch.bool)
        entity = model.text_head(H_ent, entity_mask)

    return ProjectedBatch(
        image=image,
        text=text,
        review=review,
        review_index=review_index,
        entity=entity,
        entity_present=entity_present if H_ent is not None else None,
        history_means=history_means,
    )


def info_nce(
    anchors: torch.Tensor,
    targets: torch.Tensor,
    tau: float,
    weights: Optional[torch.Tensor] = None,
    extra_negatives: Optional[torch.Tensor] = None,
    extra_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Summed InfoNCE with optional negative weights and one extra negative per row.

    For row i with s = cosine / tau:
        -log( e^{s_ii} / (e^{s_ii} + sum_{j != i} w_ij e^{s_ij} + e^{s_i,extra}) )

    Args:
        anchors: (B, d)
        targets: (B, d), row i is the positive of anchor i
        tau: Temperature, > 0
        weights: (B, B) positive negative weights; the diagonal is ignored
        extra_negatives: (B, d) one extra negative per row
        extra_mask: (B,) rows that actually have an extra negative

    Raises:
        UsageError: If tau is not positive
        NumericalError: If a weight is not positive
    """
    if tau <= 0:
        raise UsageError("temperature must be positive")
    if anchors.shape != targets.shape or anchors.dim() != 2:
        raise ShapeMismatchError(f"anchors {tuple(anchors.shape)} and targets {tuple(targets.shape)} must match")
    batch = anchors.shape[0]

    a = F.normalize(anchors, dim=-1)
    t = F.normalize(targets, dim=-1)
    logits = (a @ t.transpose(0, 1)) / tau
    positives = logits.diagonal()

    if weights is not None:
        if weights.shape != (batch, batch):
            raise ShapeMismatchError(f"weights must be {batch}x{batch}")
        off_diagonal = ~torch.eye(batch, dtype=torch.bool)
        if (weights[off_diagonal] <= 0).any():
            raise NumericalError("negative weights must be positive")
        log_w = torch.where(off_diagonal, torch.log(weights.to(logits.dtype)), torch.zeros_like(logits))
        logits = logits + log_w

    if extra_negatives is not None:
        if extra_negatives.shape != anchors.shape:
            raise ShapeMismatchError("extra negatives must have the anchors' shape")
        extra = (a * F.normalize(extra_negatives, dim=-1)).sum(dim=-1) / tau
        if extra_mask is not None:
            extra = torch.where(extra_mask, extra, torch.full_like(extra, float("-inf")))
        logits = torch.cat([logits, extra[:, None]], dim=1)

    return (torch.logsumexp(logits, dim=1) - positives).sum()


def cl_loss(anchors: torch.Tensor, targets: torch.Tensor, tau: float) -> torch.Tensor:
    """Vanilla in-batch contrast with unit weights."""
    return info_nce(anchors, targets, tau)


def _as_span(span: SpanLike) -> Tuple[int, int, str]:
    if isinstance(span, EntitySpan):
        return span.start, span.end, span.entity
    start, end, entity = span
    return int(start), int(end), str(entity)


def make_entity_negative(
    tokens: Sequence[Token],
    entity_spans: Sequence[SpanLike],
    entity_vocab: Any,
    rng: np.random.Generator,
    encode: Optional[Callable[[List[str]], List[Token]]] = None,
    max_len: int = 64,
) -> Optional[List[Token]]:
    """
    Replace every entity span with a uniformly sampled different entity.

    Replacements are drawn left to right and spliced right to left so span
    offsets stay valid. A result longer than `max_len` is cut to
    `max_len - 1` tokens plus its original final token (EOS for targets).

    Args:
        tokens: Target sequence (token strings, or ids when `encode` is given)
        entity_spans: Half-open spans with their entity strings
        entity_vocab: EntityVocabulary to sample from
        rng: Random generator
        encode: Maps entity token strings into the sequence's token type
        max_len: Length cap

    Returns:
        The corrupted sequence, or None when there are no spans

    Raises:
        UsageError: If the entity vocabulary has fewer than 2 entities
    """
    if len(entity_vocab) < 2:
        raise UsageError("entity vocabulary needs at least 2 entities")
    if not entity_spans:
        return None
    spans = sorted((_as_span(span) for span in entity_spans), key=lambda s: s[0])
    replacements = [entity_vocab.sample_other(entity, rng) for _, _, entity in spans]

    corrupted = list(tokens)
    for (start, end, _), replacement in reversed(list(zip(spans, replacements))):
        replacement_tokens = entity_vocab.tokens_for(replacement)
        corrupted[start:end] = encode(replacement_tokens) if encode else replacement_tokens
    if len(corrupted) > max_len:
        corrupted = corrupted[: max_len - 1] + [corrupted[-1]]
    return corrupted


def ccl_loss(proj: ProjectedBatch, tau: float) -> torch.Tensor:
    """
    Image-to-text contrast with the entity-swapped target of each sample as
    an extra negative. Without entity negatives this is vanilla CL(V, Y).
    """
    if proj.entity is None or proj.entity_present is None or not bool(proj.entity_present.any()):
        return info_nce(proj.image, proj.text, tau)
    return info_nce(proj.image, proj.text, tau, extra_negatives=proj.entity, extra_mask=proj.entity_present)


def history_weights(history_means: torch.Tensor, alpha: float) -> torch.Tensor:
    """
    f(i, j) = alpha ** (1 - sim(R_i, R_j)) over mean input-history embeddings.

    Similarity is clamped to [0, 1], so f lies in [1, alpha] and is symmetric.
    """
    if alpha < 1:
        raise UsageError("alpha must be >= 1")
    means = history_means.detach().to(torch.float64)
    normed = F.normalize(means, dim=-1)
    sim = torch.clamp(normed @ normed.transpose(0, 1), 0.0, 1.0)
    sim = 0.5 * (sim + sim.transpose(0, 1))
    return torch.pow(torch.tensor(float(alpha), dtype=torch.float64), 1.0 - sim)


def _history_rows(proj: ProjectedBatch) -> Tuple[torch.Tensor, torch.Tensor]:
    if proj.review is None or proj.review_index is None:
        raise ShapeMismatchError("no sample in the batch has a history to contrast")
    return proj.review, proj.text.index_select(0, proj.review_index)


def history_cl_loss(proj: ProjectedBatch, tau: float) -> torch.Tensor:
    """Vanilla CL(R, Y) over the samples that have a history."""
    review, text = _history_rows(proj)
    return info_nce(review, text, tau)


def pcl_loss(proj: ProjectedBatch, tau: float, alpha: float) -> torch.Tensor:
    """
    History-to-text contrast with negatives weighted by history similarity.

    Raises:
        UsageError: If alpha < 1
    """
    if alpha < 1:
        raise UsageError("alpha must be >= 1")
    review, text = _history_rows(proj)
    if proj.history_means is None:
        raise ShapeMismatchError("personalized contrast needs history means")
    means = proj.history_means.index_select(0, proj.review_index)
    weights = history_weights(means, alpha).to(review.dtype)
    return info_nce(review, text, tau, weights=weights)


@dataclass
class LossBreakdown:
    """Loss components of one step; total = ce + lambda1 * image_text + lambda2 * history_text."""
    ce: torch.Tensor
    total: torch.Tensor
    image_text: Optional[torch.Tensor] = None
    history_text: Optional[torch.Tensor] = None
    lambda1: float = 0.0
    lambda2: float = 0.0

    def as_floats(self) -> Dict[str, Optional[float]]:
        def value(t: Optional[torch.Tensor]) -> Optional[float]:
            return None if t is None else float(t.detach())

        return {
            "ce": value(self.ce),
            "image_text": value(self.image_text),
            "history_text": value(self.history_text),
            "total": value(self.total),
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
        }


def _as_tensor(value: Union[float, torch.Tensor]) -> torch.Tensor:
    return value if isinstance(value, torch.Tensor) else torch.tensor(float(value), dtype=torch.float64)


def total_loss(
    ce: Union[float, torch.Tensor],
    ccl: Optional[Union[float, torch.Tensor]],
    pcl: Optional[Union[float, torch.Tensor]],
    lambda1: float,
    lambda2: float,
) -> LossBreakdown:
    """
    L = CE + lambda1 * CCL + lambda2 * PCL.

    A term whose weight is zero, or which is None, is left out of the sum
    entirely, so zero weights reproduce plain cross-entropy exactly.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise UsageError("loss weights must be non-negative")
    ce_t = _as_tensor(ce)
    total = ce_t
    image_text = _as_tensor(ccl) if ccl is not None else None
    history_text = _as_tensor(pcl) if pcl is not None else None
    if image_text is not None and lambda1 != 0:
        total = total + lambda1 * image_text
    if history_text is not None and lambda2 != 0:
        total = total + lambda2 * history_text
    return LossBreakdown(
        ce=ce_t, total=total, image_text=image_text, history_text=history_text,
        lambda1=lambda1, lambda2=lambda2,
    )


def contrastive_terms(
    mode: LossMode,
    proj: ProjectedBatch,
    tau: float,
    alpha: float,
) -> Tuple[Optional[torch.Tensor], Optional[torch.Tensor]]:
    """
    Image-text and history-text terms for a loss mode.

    ce+cl uses CL for both, ce+ccl swaps in CCL for the image term, ce+pcl
    swaps in PCL for the history term and ce+ccl+pcl uses both. The
    history term is None when no sample in the batch has a history.
    """
    mode = LossMode(mode)
    if not mode.contrastive:
        return None, None
    if mode.uses_entity_negatives:
        image_term = ccl_loss(proj, tau)
    else:
        image_term = info_nce(proj.image, proj.text, tau)

    history_term = None
    if proj.review is not None:
        history_term = pcl_loss(proj, tau, alpha) if mode.uses_history_weights else history_cl_loss(proj, tau)
    return image_term, history_term
