"""
Image-sentence alignment classifier and explanation distillation.

The classifier is a logistic model over the concatenation of a sentence
embedding and an image embedding. Distillation keeps every (sentence,
image) pair of a review the classifier scores at or above a threshold;
reviews with no surviving pair drop out of the explanation corpus.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from sklearn.metrics import f1_score, roc_auc_score

from showcaseflow.core.exceptions import DegenerateLabelsError, EmptyCorpusError, ShapeMismatchError
from showcaseflow.models.enums import DataSplit, EmbeddingKind
from showcaseflow.models.records import AlignedPair, ExplanationPair, ExplanationRecord, RawReview
from showcaseflow.models.reports import ClassifierReport
from showcaseflow.services.embedding_store import EmbeddingStore

logger = logging.getLogger(__name__)

DECISION_THRESHOLD = 0.5
INIT_STD = 0.01


@dataclass
class AlignmentClassifier:
    """Logistic alignment model: score = logistic(w . [s; i] + b)."""
    weights: np.ndarray
    bias: float
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.bias = float(self.bias)
        if self.weights.size == 0 or self.weights.size % 2:
            raise ShapeMismatchError("classifier weights must have even, nonzero length 2*dim")

    @property
    def dim(self) -> int:
        return self.weights.size // 2

    def logits(self, sentences: np.ndarray, images: np.ndarray) -> np.ndarray:
        """
        Pairwise logits for every sentence row against every image row.

        Returns:
            (n_sentences, n_images) matrix
        """
        sentences = np.atleast_2d(np.asarray(sentences, dtype=np.float64))
        images = np.atleast_2d(np.asarray(images, dtype=np.float64))
        if sentences.shape[1] != self.dim or images.shape[1] != self.dim:
            raise ShapeMismatchError(
                f"classifier expects dim {self.dim}, got sentence {sentences.shape[1]} and image {images.shape[1]}"
            )
        return (sentences @ self.weights[: self.dim])[:, None] + (images @ self.weights[self.dim:])[None, :] + self.bias

    def score_matrix(self, sentences: np.ndarray, images: np.ndarray) -> np.ndarray:
        return _logistic(self.logits(sentences, images))

    def to_bytes(self) -> bytes:
        return self.weights.tobytes() + np.float64(self.bias).tobytes()

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": np.array([self.bias])}

    @classmethod
    def from_parameters(cls, parameters: Dict[str, object]) -> "AlignmentClassifier":
        weights = np.asarray(parameters["weights"], dtype=np.float64)
        bias = float(np.asarray(parameters["bias"], dtype=np.float64).reshape(-1)[0])
        return cls(weights=weights, bias=bias)


def _logistic(z: np.ndarray) -> np.ndarray:
    """Overflow-free logistic; strictly increasing wherever float64 can resolve it."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def score(classifier: AlignmentClassifier, sentence_emb: np.ndarray, image_emb: np.ndarray) -> float:
    """Confidence in (0, 1) that the sentence describes the image."""
    sentence_emb = np.asarray(sentence_emb, dtype=np.float64)
    image_emb = np.asarray(image_emb, dtype=np.float64)
    if sentence_emb.ndim != 1 or image_emb.ndim != 1:
        raise ShapeMismatchError("score expects one sentence vector and one image vector")
    return float(classifier.score_matrix(sentence_emb[None, :], image_emb[None, :])[0, 0])


def pair_features(
    pairs: Sequence[AlignedPair],
    sentence_store: EmbeddingStore,
    image_store: EmbeddingStore,
) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked [s; i] features and labels for annotated pairs."""
    if sentence_store.dim != image_store.dim:
        raise ShapeMismatchError(
            f"sentence dim {sentence_store.dim} differs from image dim {image_store.dim}"
        )
    sentences = sentence_store.resolve_all([p.sentence for p in pairs]).astype(np.float64)
    images = image_store.resolve_all([p.image for p in pairs]).astype(np.float64)
    features = np.concatenate([sentences, images], axis=1)
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    return features, labels


def class_weights(labels: torch.Tensor) -> torch.Tensor:
    """Inverse class frequency per sample, normalized so the weights average to one."""
    n = labels.numel()
    n_pos = float((labels > 0.5).sum())
    return torch.where(labels > 0.5, n / (2.0 * n_pos), n / (2.0 * (n - n_pos))).to(torch.float64)


def weighted_bce(
    features: torch.Tensor,
    labels: torch.Tensor,
    weights: torch.Tensor,
    bias: torch.Tensor,
    sample_weights: torch.Tensor,
) -> torch.Tensor:
    """Class-weighted binary cross-entropy of the logistic model, averaged over samples."""
    logits = features @ weights + bias
    return torch.nn.functional.binary_cross_entropy_with_logits(logits, labels, weight=sample_weights)


def train_classifier(
    pairs: Sequence[AlignedPair],
    sentence_store: EmbeddingStore,
    image_store: EmbeddingStore,
    epochs: int = 300,
    lr: float = 0.05,
    seed: int = 42,
) -> AlignmentClassifier:
    """
    Fit the alignment classifier by full-batch gradient descent on
    class-weighted binary cross-entropy.

    Args:
        pairs: Annotated pairs with both labels present
        sentence_store: Sentence embeddings
        image_store: Image embeddings
        epochs: Number of full-batch steps
        lr: Step size
        seed: Seed of the weight initialization

    Returns:
        The trained classifier with its per-epoch loss history

    Raises:
        DegenerateLabelsError: If all labels are identical
    """
    if not pairs:
        raise EmptyCorpusError("no annotated pairs to train on")
    features, labels = pair_features(pairs, sentence_store, image_store)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError()

    x = torch.from_numpy(features)
    y = torch.from_numpy(labels)
    sample_weights = class_weights(y)

    generator = torch.Generator().manual_seed(seed)
    w = (torch.randn(features.shape[1], generator=generator, dtype=torch.float64) * INIT_STD).requires_grad_(True)
    b = torch.zeros(1, dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.SGD([w, b], lr=lr)

    history: List[float] = []
    for epoch in range(epochs):
        optimizer.zero_grad()
        loss = weighted_bce(x, y, w, b, sample_weights)
        loss.backward()
        optimizer.step()
        history.append(float(loss.detach()))
        if epoch % 50 == 0:
            logger.debug(f"Classifier epoch {epoch}: loss={history[-1]:.6f}")

    classifier = AlignmentClassifier(weights=w.detach().numpy().copy(), bias=float(b.detach()[0]), loss_history=history)
    if history:
        logger.info(f"Trained alignment classifier on {len(pairs)} pairs, final loss {history[-1]:.4f}")
    return classifier


def eval_classifier(
    classifier: AlignmentClassifier,
    pairs: Sequence[AlignedPair],
    sentence_store: EmbeddingStore,
    image_store: EmbeddingStore,
    split: str = "test",
) -> ClassifierReport:
    """
    AUC over all positive/negative pairs and F1 at the 0.5 decision threshold.

    Raises:
        DegenerateLabelsError: If the held-out pairs hold a single class
    """
    features, labels = pair_features(pairs, sentence_store, image_store)
    if labels.size == 0 or labels.min() == labels.max():
        raise DegenerateLabelsError(f"degenerate labels in {split} partition")
    if features.shape[1] != classifier.weights.size:
        raise ShapeMismatchError(f"classifier expects dim {classifier.dim}, got {features.shape[1] // 2}")
    logits = features @ classifier.weights + classifier.bias
    # Ranked on logits: the logistic saturates in float64 and would create ties
    return ClassifierReport(
        split=split,
        auc=float(roc_auc_score(labels, logits)),
        f1=float(f1_score(labels, _logistic(logits) >= DECISION_THRESHOLD, zero_division=0)),
        size=int(labels.size),
    )


def split_pairs(
    pairs: Sequence[AlignedPair],
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 42,
) -> Tuple[List[AlignedPair], List[AlignedPair], List[AlignedPair]]:
    """
    Stratified seeded split into train, validation and test partitions.

    Each label is shuffled and cut by `ratios` on its own so every
    partition keeps the label balance of the whole set.
    """
    rng = np.random.default_rng(seed)
    parts: Tuple[List[int], List[int], List[int]] = ([], [], [])
    for label in (0, 1):
        indices = np.array([i for i, p in enumerate(pairs) if p.label == label], dtype=np.int64)
        indices = indices[rng.permutation(indices.size)]
        n_train = int(np.floor(ratios[0] * indices.size))
        n_val = int(np.floor(ratios[1] * indices.size))
        parts[0].extend(indices[:n_train].tolist())
        parts[1].extend(indices[n_train:n_train + n_val].tolist())
        parts[2].extend(indices[n_train + n_val:].tolist())
    return tuple([pairs[i] for i in sorted(part)] for part in parts)  # type: ignore[return-value]


def distill_review(
    review: RawReview,
    threshold: float,
    classifier: AlignmentClassifier,
    sentence_store: EmbeddingStore,
    image_store: EmbeddingStore,
) -> List[ExplanationPair]:
    """
    Every (sentence, image) pair of a review scoring at or above `threshold`.

    Pairs are ordered by sentence index, then by the review's image order.
    """
    if not review.sentences or not review.image_ids:
        return []
    sentences = sentence_store.vectors([s.sentence_id for s in review.sentences])
    images = image_store.vectors(review.image_ids)
    scores = classifier.score_matrix(sentences, images)

    kept = []
    for s_idx, i_idx in zip(*np.nonzero(scores >= threshold)):
        kept.append(
            ExplanationPair(
                review_id=review.review_id,
                sentence_idx=int(s_idx),
                image_id=review.image_ids[int(i_idx)],
                score=float(scores[s_idx, i_idx]),
            )
        )
    return kept


def user_histories(
    reviews: Sequence[RawReview],
    review_store: Optional[EmbeddingStore],
    max_history: int = 10,
) -> Dict[str, List[str]]:
    """
    History review ids for every review: the same user's other reviews of
    the same split, in corpus order, that have a review-text embedding.

    Histories never cross splits.
    """
    by_user: Dict[Tuple[str, DataSplit], List[str]] = {}
    for review in reviews:
        if review_store is None or review.review_id in review_store:
            by_user.setdefault((review.user_id, review.split), []).append(review.review_id)
    return {
        review.review_id: [
            rid for rid in by_user.get((review.user_id, review.split), []) if rid != review.review_id
        ][:max_history]
        for review in reviews
    }


def distill_corpus(
    reviews: Sequence[RawReview],
    threshold: float,
    classifier: AlignmentClassifier,
    sentence_store: EmbeddingStore,
    image_store: EmbeddingStore,
    review_store: Optional[EmbeddingStore] = None,
    max_images: int = 5,
    max_history: int = 10,
) -> Tuple[List[ExplanationPair], List[ExplanationRecord]]:
    """
    Distill a review corpus into explanation pairs and explanation records.

    A record keeps the review's sentences and images that appear in at
    least one kept pair, in their original order.

    Raises:
        EmptyCorpusError: If `reviews` is empty
    """
    if not reviews:
        raise EmptyCorpusError("review corpus is empty")
    if review_store is not None and review_store.kind != EmbeddingKind.REVIEW_TEXT:
        raise ShapeMismatchError("history store must hold review-text vectors")

    histories = user_histories(reviews, review_store, max_history)
    all_pairs: List[ExplanationPair] = []
    records: List[ExplanationRecord] = []
    for review in reviews:
        pairs = distill_review(review, threshold, classifier, sentence_store, image_store)
        if not pairs:
            continue
        all_pairs.extend(pairs)
        sentence_idx = sorted({p.sentence_idx for p in pairs})
        kept_images = {p.image_id for p in pairs}
        records.append(
            ExplanationRecord(
                review_id=review.review_id,
                user_id=review.user_id,
                business_id=review.business_id,
                split=review.split,
                sentences=[review.sentences[i] for i in sentence_idx],
                image_ids=[i for i in review.image_ids if i in kept_images][:max_images],
                history_ids=histories[review.review_id],
            )
        )

    logger.info(
        f"Distilled {len(all_pairs)} pairs from {len(records)}/{len(reviews)} reviews at threshold {threshold}"
    )
    return all_pairs, records
