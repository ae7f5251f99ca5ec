"""
Personalized diverse image selection with a determinantal point process.

A relevance model maps a user profile and each candidate image into a
shared space; relevance r_i = exp(<u, v_i>) and the cosine similarity S of
the raw image vectors form the kernel L = Diag(r) S Diag(r). Showcases are
read off L by greedy MAP inference with incremental Cholesky updates.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from showcaseflow.config import DppConfig
from showcaseflow.core.exceptions import (
    DiversityUndefinedError,
    EmptyCorpusError,
    NonFiniteValueError,
    ShapeMismatchError,
    UnresolvedReferenceError,
)
from showcaseflow.models.enums import ProfileMode
from showcaseflow.models.records import Interaction, Showcase
from showcaseflow.models.reports import RankingReport, as_percent
from showcaseflow.services.embedding_store import EmbeddingStore, cosine_matrix, dissimilarity

logger = logging.getLogger(__name__)

# An item extends the selection only while its squared Cholesky pivot exceeds
# this fraction of its own diagonal entry L_ii.
PIVOT_EPS = 1e-10
# Below this pool size every greedy step is cross-checked against direct determinants.
CROSS_CHECK_LIMIT = 32
CROSS_CHECK_TOL = 1e-6
MIN_EIGENVALUE = 1e-10


def mlp_chain(in_dim: int, widths: Sequence[int]) -> nn.Sequential:
    """Linear layers of the given widths with ReLU between consecutive layers."""
    layers: List[nn.Module] = []
    previous = in_dim
    for i, width in enumerate(widths):
        layers.append(nn.Linear(previous, width))
        if i < len(widths) - 1:
            layers.append(nn.ReLU())
        previous = width
    return nn.Sequential(*layers)


class RelevanceModel(nn.Module):
    """User and image towers whose dot product scores user-image relevance."""

    def __init__(self, user_dim: int, image_dim: int, user_hidden: Sequence[int], image_hidden: Sequence[int]):
        super().__init__()
        if user_hidden[-1] != image_hidden[-1]:
            raise ShapeMismatchError("user and image towers must end in the same width")
        self.user_dim = user_dim
        self.image_dim = image_dim
        self.user_mlp = mlp_chain(user_dim, user_hidden)
        self.image_mlp = mlp_chain(image_dim, image_hidden)

    def forward(self, profile: torch.Tensor, images: torch.Tensor) -> torch.Tensor:
        """
        Relevance logits <user_mlp(profile), image_mlp(v_i)> for every candidate.

        Args:
            profile: (user_dim,) profile feature
            images: (n, image_dim) candidate vectors

        Returns:
            (n,) logits
        """
        if profile.shape[-1] != self.user_dim:
            raise ShapeMismatchError(f"profile dim {profile.shape[-1]} does not match user tower input {self.user_dim}")
        if images.shape[-1] != self.image_dim:
            raise ShapeMismatchError(f"image dim {images.shape[-1]} does not match image tower input {self.image_dim}")
        return self.image_mlp(images) @ self.user_mlp(profile)

    @classmethod
    def from_config(cls, config: DppConfig, user_dim: int, image_dim: int) -> "RelevanceModel":
        return cls(user_dim, image_dim, config.user_hidden, config.image_hidden)


@dataclass
class DppKernel:
    """L = Diag(r) S Diag(r) over a candidate pool."""
    L: np.ndarray
    relevance: np.ndarray
    similarity: np.ndarray
    item_ids: List[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.L.shape[0])


@dataclass
class Selection:
    """Greedy MAP result: chosen indices in selection order and their log-det gains."""
    indices: List[int]
    gains: List[float]

    @property
    def log_det(self) -> float:
        return float(sum(self.gains))


def kernel_from_relevance(relevance: np.ndarray, similarity: np.ndarray, item_ids: Optional[Sequence[str]] = None) -> DppKernel:
    relevance = np.asarray(relevance, dtype=np.float64)
    similarity = np.asarray(similarity, dtype=np.float64)
    L = relevance[:, None] * similarity * relevance[None, :]
    L = 0.5 * (L + L.T)
    if not np.all(np.isfinite(L)):
        raise NonFiniteValueError("non-finite DPP kernel")
    return DppKernel(L=L, relevance=relevance, similarity=similarity, item_ids=list(item_ids or []))


def build_kernel(
    user_profile: np.ndarray,
    candidates: np.ndarray,
    model: RelevanceModel,
    item_ids: Optional[Sequence[str]] = None,
    logit_clip: float = 15.0,
) -> DppKernel:
    """
    Kernel for one user over one candidate pool.

    Raises:
        EmptyCorpusError: If the pool is empty
        ShapeMismatchError: If dims do not match the model
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float32))
    if candidates.shape[0] == 0 or candidates.size == 0:
        raise EmptyCorpusError("empty candidate set")
    with torch.no_grad():
        logits = model(torch.as_tensor(np.asarray(user_profile, dtype=np.float32)), torch.from_numpy(candidates))
    logits = np.clip(logits.double().numpy(), -logit_clip, logit_clip)
    return kernel_from_relevance(np.exp(logits), cosine_matrix(candidates), item_ids)


def _direct_gain(L: np.ndarray, selected: Sequence[int], candidate: int) -> float:
    def logdet(idx: Sequence[int]) -> float:
        if not idx:
            return 0.0
        sign, value = np.linalg.slogdet(L[np.ix_(idx, idx)])
        return value if sign > 0 else -math.inf

    return logdet(list(selected) + [candidate]) - logdet(selected)


def _pivot_floor(L: np.ndarray) -> np.ndarray:
    """Per-item squared-pivot cutoff, relative to the item's own scale L_ii."""
    return PIVOT_EPS * np.maximum(np.diag(L), 0.0)


def _direct_greedy(L: np.ndarray, k: int, selected: List[int], gains: List[float]) -> Selection:
    n = L.shape[0]
    floor = _pivot_floor(L)
    while len(selected) < min(k, n):
        best, best_gain = -1, -math.inf
        for i in range(n):
            if i in selected or floor[i] <= 0.0:
                continue
            gain = _direct_gain(L, selected, i)
            if gain <= math.log(floor[i]):
                continue
            if gain > best_gain:
                best, best_gain = i, gain
        if best < 0:
            break
        selected.append(best)
        gains.append(best_gain)
    return Selection(indices=selected, gains=gains)


def greedy_map(kernel: DppKernel, k: int) -> Selection:
    """
    Greedy MAP inference: repeatedly add the item with the largest log-det gain.

    The gain of item i is log d_i^2, its squared pivot in the incremental
    Cholesky factorization of L restricted to the selection. Ties go to the
    lowest index. Stops at k items or when no item extends the selection
    to a positive-definite submatrix. An item whose squared pivot has
    shrunk below PIVOT_EPS times its diagonal entry counts as spanned by
    the selection, so the cutoff follows the scale of the kernel.
    """
    if k < 1:
        raise ShapeMismatchError("K must be a positive integer")
    L = kernel.L
    n = kernel.size
    limit = min(k, n)
    if limit == 0:
        return Selection(indices=[], gains=[])

    cis = np.zeros((limit, n))
    di2s = np.copy(np.diag(L)).astype(np.float64)
    floor = _pivot_floor(L)
    selected: List[int] = []
    gains: List[float] = []
    cross_check = n < CROSS_CHECK_LIMIT

    while len(selected) < limit:
        extendable = np.where((di2s > floor) & (floor > 0.0), di2s, -np.inf)
        best = int(np.argmax(extendable))
        if not np.isfinite(extendable[best]):
            break
        gain = math.log(di2s[best])
        if cross_check:
            direct = _direct_gain(L, selected, best)
            if not abs(direct - gain) <= CROSS_CHECK_TOL * max(1.0, abs(direct)):
                logger.warning(
                    f"Incremental log-det gain {gain:.10f} disagrees with direct {direct:.10f}; "
                    f"finishing selection with direct determinants"
                )
                return _direct_greedy(L, k, selected, gains)
        selected.append(best)
        gains.append(gain)
        if len(selected) == limit:
            break

        j = len(selected) - 1
        pivot = math.sqrt(di2s[best])
        eis = (L[best, :] - cis[:j, best] @ cis[:j, :]) / pivot
        cis[j, :] = eis
        di2s -= np.square(eis)
        di2s[selected] = -np.inf

    return Selection(indices=selected, gains=gains)


def dpp_log_likelihood(logits: torch.Tensor, similarity: torch.Tensor, subset: Sequence[int], jitter: float = 1e-6) -> torch.Tensor:
    """
    log det(L_subset) - log det(L + I) for L = Diag(e^logits) S Diag(e^logits).

    Jitter is added to L_subset when its smallest eigenvalue is below 1e-10.
    """
    r = torch.exp(logits)
    L = r[:, None] * similarity * r[None, :]
    L = 0.5 * (L + L.transpose(0, 1))
    idx = torch.as_tensor(list(subset), dtype=torch.long)
    L_sub = L.index_select(0, idx).index_select(1, idx)
    eye_sub = torch.eye(len(subset), dtype=L.dtype)
    if torch.linalg.eigvalsh(L_sub.detach()).min() < MIN_EIGENVALUE:
        L_sub = L_sub + jitter * eye_sub
    return torch.logdet(L_sub) - torch.logdet(L + torch.eye(L.shape[0], dtype=L.dtype))


def profile_dim(mode: ProfileMode, image_dim: int, review_dim: int) -> int:
    mode = ProfileMode(mode)
    if mode is ProfileMode.IMG:
        return image_dim
    if mode is ProfileMode.TEXT:
        return review_dim
    return image_dim + review_dim


def build_profile(
    interaction: Interaction,
    image_store: EmbeddingStore,
    review_store: Optional[EmbeddingStore],
    mode: ProfileMode = ProfileMode.IMG_TEXT,
) -> np.ndarray:
    """
    User profile feature: per-modality mean of the user's history, then
    concatenated image part first. Empty histories contribute zeros.
    """
    mode = ProfileMode(mode)
    parts = []
    if mode in (ProfileMode.IMG, ProfileMode.IMG_TEXT):
        vectors = image_store.vectors(interaction.history_images)
        parts.append(vectors.mean(axis=0) if len(vectors) else np.zeros(image_store.dim, dtype=np.float32))
    if mode in (ProfileMode.TEXT, ProfileMode.IMG_TEXT):
        if review_store is None:
            raise UnresolvedReferenceError(f"profile mode {mode.value} needs a review-text store")
        vectors = review_store.vectors(interaction.history_reviews)
        parts.append(vectors.mean(axis=0) if len(vectors) else np.zeros(review_store.dim, dtype=np.float32))
    return np.concatenate(parts).astype(np.float32)


class ShowcaseSelector:
    """
    Selects showcases for interactions with a relevance model and DPP
    greedy MAP inference.
    """

    def __init__(
        self,
        model: RelevanceModel,
        image_store: EmbeddingStore,
        review_store: Optional[EmbeddingStore],
        config: DppConfig,
    ):
        self.model = model
        self.image_store = image_store
        self.review_store = review_store
        self.config = config

    def profile(self, interaction: Interaction) -> np.ndarray:
        return build_profile(interaction, self.image_store, self.review_store, self.config.profile_mode)

    def kernel(self, interaction: Interaction) -> DppKernel:
        return build_kernel(
            self.profile(interaction),
            self.image_store.vectors(interaction.candidates),
            self.model,
            item_ids=interaction.candidates,
            logit_clip=self.config.logit_clip,
        )

    def select(self, interaction: Interaction, k: Optional[int] = None) -> Showcase:
        k = k or self.config.k
        kernel = self.kernel(interaction)
        selection = greedy_map(kernel, k)
        return Showcase(
            user_id=interaction.user_id,
            business_id=interaction.business_id,
            review_id=interaction.review_id,
            selected=[kernel.item_ids[i] for i in selection.indices],
            k=k,
        )


def random_showcase(interaction: Interaction, k: int, rng: np.random.Generator) -> Showcase:
    """Uniformly random K-subset of the candidate pool."""
    if not interaction.candidates:
        raise EmptyCorpusError("empty candidate set")
    take = min(k, len(interaction.candidates))
    chosen = rng.choice(len(interaction.candidates), size=take, replace=False)
    return Showcase(
        user_id=interaction.user_id,
        business_id=interaction.business_id,
        review_id=interaction.review_id,
        selected=[interaction.candidates[int(i)] for i in chosen],
        k=k,
    )


def train_relevance(
    model: RelevanceModel,
    interactions: Sequence[Interaction],
    image_store: EmbeddingStore,
    review_store: Optional[EmbeddingStore],
    config: DppConfig,
    seed: int = 42,
) -> List[float]:
    """
    Fit the relevance model by maximizing the DPP log-likelihood of each
    interaction's ground-truth subset with Adam.

    Args:
        model: Model to train in place
        interactions: Training interactions with nonempty pools and ground truth
        image_store: Image vectors
        review_store: Review-text vectors, needed for text profiles
        config: DPP settings (epochs, lr, batch size, profile mode, jitter)
        seed: Seed of the per-epoch shuffles

    Returns:
        Mean negative log-likelihood per epoch

    Raises:
        UnresolvedReferenceError: If a ground-truth id is not in its pool
    """
    samples: List[Tuple[torch.Tensor, torch.Tensor, torch.Tensor, List[int]]] = []
    for interaction in interactions:
        if not interaction.candidates or not interaction.ground_truth:
            continue
        position = {image_id: i for i, image_id in enumerate(interaction.candidates)}
        missing = [i for i in interaction.ground_truth if i not in position]
        if missing:
            raise UnresolvedReferenceError(f"ground-truth images not in pool of {interaction.review_id}: {missing}")
        candidates = image_store.vectors(interaction.candidates)
        samples.append((
            torch.from_numpy(build_profile(interaction, image_store, review_store, config.profile_mode)),
            torch.from_numpy(np.ascontiguousarray(candidates)),
            torch.from_numpy(cosine_matrix(candidates)),
            [position[i] for i in interaction.ground_truth],
        ))
    if not samples:
        raise EmptyCorpusError("no interactions with candidates and ground truth to train on")

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(seed)
    history: List[float] = []
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [samples[int(i)] for i in order[start:start + config.batch_size]]
            optimizer.zero_grad()
            loss = torch.zeros((), dtype=torch.float64)
            for profile, candidates, similarity, subset in batch:
                logits = torch.clamp(model(profile, candidates).double(), -config.logit_clip, config.logit_clip)
                loss = loss - dpp_log_likelihood(logits, similarity, subset, config.jitter)
            loss = loss / len(batch)
            if not torch.isfinite(loss):
                raise NonFiniteValueError(f"non-finite DPP loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
        history.append(epoch_loss / len(samples))
        if epoch % 10 == 0 or epoch == config.epochs - 1:
            logger.info(f"Relevance epoch {epoch}: nll={history[-1]:.4f}")
    model.eval()
    return history


def rank_metrics(selected: Sequence[str], ground_truth: Sequence[str], k: int) -> Dict[str, float]:
    """
    Precision, recall and F1 of a showcase against the ground-truth images.

    Raises:
        EmptyCorpusError: If the ground truth is empty
    """
    if k < 1:
        raise ShapeMismatchError("K must be a positive integer")
    truth = set(ground_truth)
    if not truth:
        raise EmptyCorpusError("empty ground truth")
    chosen = list(selected)[:k]
    hits = len(set(chosen) & truth)
    precision = hits / len(chosen) if chosen else 0.0
    recall = hits / len(truth)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def div_at_k(images: Sequence[np.ndarray]) -> float:
    """
    Mean pairwise dis-similarity of a showcase's images.

    Raises:
        DiversityUndefinedError: With fewer than two images
    """
    images = list(images)
    if len(images) < 2:
        raise DiversityUndefinedError()
    total = sum(dissimilarity(images[m], images[n]) for m in range(len(images)) for n in range(m + 1, len(images)))
    return total / (len(images) * (len(images) - 1) / 2)


def evaluate_showcases(
    showcases: Sequence[Showcase],
    interactions: Sequence[Interaction],
    image_store: EmbeddingStore,
    k: int,
) -> RankingReport:
    """Averaged P/R/F1@K and div@K in percent over showcases with ground truth."""
    by_review = {interaction.review_id: interaction for interaction in interactions}
    totals = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    scored = 0
    diversities: List[float] = []
    for showcase in showcases:
        interaction = by_review.get(showcase.review_id or "")
        if interaction is None or not interaction.ground_truth:
            continue
        for key, value in rank_metrics(showcase.selected, interaction.ground_truth, k).items():
            totals[key] += value
        scored += 1
        if len(showcase.selected) >= 2:
            diversities.append(div_at_k(list(image_store.vectors(showcase.selected))))
    if scored == 0:
        raise EmptyCorpusError("no showcase has ground truth to score against")
    return RankingReport(
        precision=as_percent(totals["precision"] / scored),
        recall=as_percent(totals["recall"] / scored),
        f1=as_percent(totals["f1"] / scored),
        diversity=as_percent(float(np.mean(diversities))) if diversities else None,
        users=scored,
    )


def random_baseline(
    interactions: Sequence[Interaction],
    image_store: EmbeddingStore,
    k: int,
    trials: int = 1000,
    seed: int = 42,
) -> RankingReport:
    """
    Expected P/R/F1@K and div@K of uniform random selection, averaged over
    `trials` independent draws per interaction.
    """
    rng = np.random.default_rng(seed)
    totals = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    diversities: List[float] = []
    scored = 0
    for interaction in interactions:
        n = len(interaction.candidates)
        if n == 0 or not interaction.ground_truth:
            continue
        take = min(k, n)
        draws = np.argsort(rng.random((trials, n)), axis=1)[:, :take]
        is_truth = np.isin(np.asarray(interaction.candidates), interaction.ground_truth)
        hits = is_truth[draws].sum(axis=1).astype(np.float64)
        precision = hits / take
        recall = hits / len(set(interaction.ground_truth))
        denom = precision + recall
        f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)
        totals["precision"] += float(precision.mean())
        totals["recall"] += float(recall.mean())
        totals["f1"] += float(f1.mean())
        scored += 1
        if take >= 2:
            dis = 1.0 - cosine_matrix(image_store.vectors(interaction.candidates))
            np.fill_diagonal(dis, 0.0)
            # Each unordered pair appears twice in the (take, take) block.
            per_trial = dis[draws[:, :, None], draws[:, None, :]].sum(axis=(1, 2)) / (take * (take - 1))
            diversities.append(float(per_trial.mean()))
    if scored == 0:
        raise EmptyCorpusError("no interaction has ground truth to score against")
    return RankingReport(
        precision=as_percent(totals["precision"] / scored),
        recall=as_percent(totals["recall"] / scored),
        f1=as_percent(totals["f1"] / scored),
        diversity=as_percent(float(np.mean(diversities))) if diversities else None,
        users=scored,
    )
