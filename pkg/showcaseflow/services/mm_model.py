"""
Visually-aware explanation generator.

Images and historical reviews are projected into the hidden space and
encoded jointly by stacked self-attention layers without positional
encoding, so the encoder treats both inputs as sets. An autoregressive
decoder with learned positions attends causally to its own prefix and
across to the encoder states, and beam search turns it into text.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from showcaseflow.config import ModelConfig
from showcaseflow.core.exceptions import (
    EmptyAxisError,
    EmptyCorpusError,
    ShapeMismatchError,
    VocabularyMismatchError,
)
from showcaseflow.models.records import ReviewRecord
from showcaseflow.services import diffmath
from showcaseflow.services.embedding_store import EmbeddingStore
from showcaseflow.services.pc2l import ProjectionHead, make_entity_negative
from showcaseflow.services.text_processor import BOS_ID, EOS_ID, PAD_ID, EntityVocabulary, Vocabulary

logger = logging.getLogger(__name__)

MAX_POSITIONS = 64


class MultiHeadAttention(nn.Module):
    """Multi-head scaled dot-product attention with boolean masks."""

    def __init__(self, hidden: int, heads: int):
        super().__init__()
        if hidden % heads != 0:
            raise ShapeMismatchError("hidden must be divisible by heads")
        self.heads = heads
        self.head_dim = hidden // heads
        self.query = nn.Linear(hidden, hidden)
        self.key = nn.Linear(hidden, hidden)
        self.value = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, hidden)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.heads, self.head_dim).transpose(1, 2)

    def forward(
        self,
        x_q: torch.Tensor,
        x_kv: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            x_q: (B, n_q, hidden)
            x_kv: (B, n_k, hidden)
            mask: Boolean, broadcastable to (B, heads, n_q, n_k)

        Returns:
            Tuple of (output (B, n_q, hidden), weights (B, heads, n_q, n_k))
        """
        q, k, v = self._split(self.query(x_q)), self._split(self.key(x_kv)), self._split(self.value(x_kv))
        context, weights = diffmath.scaled_dot_attention(q, k, v, mask)
        batch, _, length, _ = context.shape
        context = context.transpose(1, 2).reshape(batch, length, self.heads * self.head_dim)
        return self.out(context), weights


class FeedForward(nn.Module):
    def __init__(self, hidden: int, multiplier: int):
        super().__init__()
        self.fc1 = nn.Linear(hidden, hidden * multiplier)
        self.fc2 = nn.Linear(hidden * multiplier, hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(diffmath.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, hidden: int, heads: int, multiplier: int):
        super().__init__()
        self.attention = MultiHeadAttention(hidden, heads)
        self.norm1 = nn.LayerNorm(hidden)
        self.ffn = FeedForward(hidden, multiplier)
        self.norm2 = nn.LayerNorm(hidden)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        attended, _ = self.attention(x, x, key_mask[:, None, None, :])
        x = diffmath.layer_norm(x + attended, self.norm1.weight, self.norm1.bias)
        return diffmath.layer_norm(x + self.ffn(x), self.norm2.weight, self.norm2.bias)


class DecoderLayer(nn.Module):
    def __init__(self, hidden: int, heads: int, multiplier: int):
        super().__init__()
        self.self_attention = MultiHeadAttention(hidden, heads)
        self.norm1 = nn.LayerNorm(hidden)
        self.cross_attention = MultiHeadAttention(hidden, heads)
        self.norm2 = nn.LayerNorm(hidden)
        self.ffn = FeedForward(hidden, multiplier)
        self.norm3 = nn.LayerNorm(hidden)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        memory_mask: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        causal = diffmath.causal_mask(x.shape[1], device=x.device)
        attended, _ = self.self_attention(x, x, causal[None, None, :, :])
        x = diffmath.layer_norm(x + attended, self.norm1.weight, self.norm1.bias)
        crossed, cross_weights = self.cross_attention(x, memory, memory_mask[:, None, None, :])
        x = diffmath.layer_norm(x + crossed, self.norm2.weight, self.norm2.bias)
        return diffmath.layer_norm(x + self.ffn(x), self.norm3.weight, self.norm3.bias), cross_weights


@dataclass
class EncoderOutput:
    """Encoder states split back by modality, with slot masks (True = present)."""
    H_V: torch.Tensor
    H_R: torch.Tensor
    image_mask: torch.Tensor
    review_mask: torch.Tensor

    @property
    def memory(self) -> torch.Tensor:
        return torch.cat([self.H_V, self.H_R], dim=1)

    @property
    def memory_mask(self) -> torch.Tensor:
        return torch.cat([self.image_mask, self.review_mask], dim=1)

    def select(self, index: int) -> "EncoderOutput":
        """Single-sample view of a batched output."""
        sl = slice(index, index + 1)
        return EncoderOutput(self.H_V[sl], self.H_R[sl], self.image_mask[sl], self.review_mask[sl])

    def repeat(self, n: int) -> "EncoderOutput":
        """Tile a single-sample output n times along the batch axis."""
        return EncoderOutput(
            self.H_V.expand(n, -1, -1),
            self.H_R.expand(n, -1, -1),
            self.image_mask.expand(n, -1),
            self.review_mask.expand(n, -1),
        )


@dataclass
class Batch:
    """Padded, tensorized generator batch."""
    review_ids: List[str]
    images: torch.Tensor
    image_mask: torch.Tensor
    reviews: torch.Tensor
    review_mask: torch.Tensor
    inputs: torch.Tensor
    labels: torch.Tensor
    history_means: torch.Tensor
    entity_inputs: Optional[torch.Tensor] = None
    entity_labels: Optional[torch.Tensor] = None
    entity_present: Optional[torch.Tensor] = None

    @property
    def size(self) -> int:
        return len(self.review_ids)


def shift_right(labels: Sequence[int]) -> List[int]:
    """Decoder inputs for teacher forcing: [BOS] + Y[:-1]."""
    return [BOS_ID] + list(labels[:-1])


def _pad(sequences: Sequence[Sequence[int]], length: int) -> torch.Tensor:
    out = torch.full((len(sequences), length), PAD_ID, dtype=torch.long)
    for row, seq in enumerate(sequences):
        out[row, : len(seq)] = torch.as_tensor(list(seq), dtype=torch.long)
    return out


def _stack_slots(
    groups: Sequence[Sequence[str]],
    store: Optional[EmbeddingStore],
    slots: int,
    dim: int,
) -> Tuple[torch.Tensor, torch.Tensor]:
    values = np.zeros((len(groups), slots, dim), dtype=np.float32)
    mask = np.zeros((len(groups), slots), dtype=bool)
    if store is not None and slots > 0:
        for row, ids in enumerate(groups):
            ids = list(ids)[:slots]
            if ids:
                values[row, : len(ids)] = store.vectors(ids)
                mask[row, : len(ids)] = True
    return torch.from_numpy(values), torch.from_numpy(mask)


def collate(
    records: Sequence[ReviewRecord],
    image_store: EmbeddingStore,
    review_store: Optional[EmbeddingStore],
    config: ModelConfig,
    vocabulary: Optional[Vocabulary] = None,
    entity_vocab: Optional[EntityVocabulary] = None,
    rng: Optional[np.random.Generator] = None,
) -> Batch:
    """
    Tensorize records into a padded batch.

    Entity-swap negatives are built when `entity_vocab`, `vocabulary` and
    `rng` are all given; records without entity spans get none.
    """
    if not records:
        raise EmptyCorpusError("cannot collate an empty batch")
    for record in records:
        if not record.target:
            raise EmptyAxisError(f"record {record.review_id} has an empty target")

    images, image_mask = _stack_slots([r.images for r in records], image_store, config.max_images, image_store.dim)
    if not image_mask.any(dim=1).all():
        raise EmptyCorpusError("every record needs at least one image")
    review_dim = review_store.dim if review_store is not None else max(config.review_dim, 1)
    slots = config.max_history if (config.use_reviews and review_store is not None) else 0
    reviews, review_mask = _stack_slots([r.history for r in records], review_store, slots, review_dim)

    history_means = torch.zeros(len(records), review_dim, dtype=torch.float64)
    if review_store is not None:
        for row, record in enumerate(records):
            ids = record.history[: config.max_history]
            if ids:
                history_means[row] = torch.from_numpy(review_store.vectors(ids).astype(np.float64).mean(axis=0))

    length = max(len(r.target) for r in records)
    labels = _pad([r.target for r in records], length)
    inputs = _pad([shift_right(r.target) for r in records], length)

    batch = Batch(
        review_ids=[r.review_id for r in records],
        images=images,
        image_mask=image_mask,
        reviews=reviews,
        review_mask=review_mask,
        inputs=inputs,
        labels=labels,
        history_means=history_means,
    )

    if entity_vocab is not None and vocabulary is not None and rng is not None:
        negatives: List[Optional[List[int]]] = [
            make_entity_negative(
                r.target, r.entity_spans, entity_vocab, rng,
                encode=vocabulary.encode, max_len=config.max_len,
            )
            for r in records
        ]
        present = [neg is not None for neg in negatives]
        if any(present):
            filled = [neg if neg is not None else [EOS_ID] for neg in negatives]
            ent_length = max(len(seq) for seq in filled)
            batch.entity_labels = _pad(filled, ent_length)
            batch.entity_inputs = _pad([shift_right(seq) for seq in filled], ent_length)
            batch.entity_present = torch.tensor(present, dtype=torch.bool)
    return batch


class MultiModalExplainer(nn.Module):
    """
    Encoder-decoder explanation generator with projection heads for the
    contrastive objectives.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.vocab <= 0 or config.image_dim <= 0:
            raise ShapeMismatchError("vocab and image_dim must be set before building the model")
        if config.max_len > MAX_POSITIONS:
            raise ShapeMismatchError(f"max_len may not exceed {MAX_POSITIONS}")
        self.config = config
        hidden = config.hidden
        review_dim = max(config.review_dim, 1)

        self.image_projection = nn.Linear(config.image_dim, hidden, bias=False)
        self.review_projection = nn.Linear(review_dim, hidden, bias=False)
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(hidden, config.heads, config.ffn_multiplier) for _ in range(config.enc_layers)
        )

        self.token_embedding = nn.Embedding(config.vocab, hidden)
        self.position_embedding = nn.Embedding(MAX_POSITIONS, hidden)
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(hidden, config.heads, config.ffn_multiplier) for _ in range(config.dec_layers)
        )
        self.output_head = nn.Linear(hidden, config.vocab)

        self.image_head = ProjectionHead(hidden, config.proj_dim)
        self.review_head = ProjectionHead(hidden, config.proj_dim)
        self.text_head = ProjectionHead(hidden, config.proj_dim)

    def encode(
        self,
        images: torch.Tensor,
        image_mask: torch.Tensor,
        reviews: Optional[torch.Tensor] = None,
        review_mask: Optional[torch.Tensor] = None,
    ) -> EncoderOutput:
        """
        Joint self-attention over projected image and review slots.

        Args:
            images: (B, n, image_dim) image vectors, zero-padded
            image_mask: (B, n) True for present images
            reviews: (B, m, review_dim) history vectors, or None for image-only
            review_mask: (B, m) True for present reviews

        Raises:
            EmptyCorpusError: If a sample has neither images nor reviews
        """
        batch = images.shape[0]
        if reviews is None or not self.config.use_reviews:
            reviews = images.new_zeros(batch, 0, max(self.config.review_dim, 1))
            review_mask = torch.zeros(batch, 0, dtype=torch.bool)
        present = torch.cat([image_mask, review_mask], dim=1)
        if not present.any(dim=1).all():
            raise EmptyCorpusError("encoder input has neither images nor reviews")

        z_v = self.image_projection(images)
        z_r = self.review_projection(reviews)
        h = torch.cat([z_v, z_r], dim=1)
        for layer in self.encoder_layers:
            h = layer(h, present)
        n = images.shape[1]
        return EncoderOutput(H_V=h[:, :n], H_R=h[:, n:], image_mask=image_mask, review_mask=review_mask)

    def encode_batch(self, batch: Batch) -> EncoderOutput:
        return self.encode(batch.images, batch.image_mask, batch.reviews, batch.review_mask)

    def _run_decoder(self, enc: EncoderOutput, prefix: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        if prefix.dim() == 1:
            prefix = prefix.unsqueeze(0)
        length = prefix.shape[1]
        if length > MAX_POSITIONS:
            raise ShapeMismatchError(f"prefix of {length} tokens exceeds {MAX_POSITIONS}")
        if prefix.numel() and (int(prefix.min()) < 0 or int(prefix.max()) >= self.config.vocab):
            raise VocabularyMismatchError(f"unknown token id in prefix (vocab size {self.config.vocab})")
        positions = torch.arange(length, device=prefix.device)
        x = diffmath.embedding_lookup(self.token_embedding.weight, prefix)
        x = x + diffmath.embedding_lookup(self.position_embedding.weight, positions)[None]
        memory, memory_mask = enc.memory, enc.memory_mask
        weights = []
        for layer in self.decoder_layers:
            x, w = layer(x, memory, memory_mask)
            weights.append(w)
        return x, weights

    def decode_hidden(self, enc: EncoderOutput, prefix: torch.Tensor) -> torch.Tensor:
        """Final decoder hidden states (B, T, hidden) for token prefixes (B, T)."""
        return self._run_decoder(enc, prefix)[0]

    def decode_logits(self, enc: EncoderOutput, prefix: torch.Tensor) -> torch.Tensor:
        """Vocabulary logits (B, T, vocab) at every prefix position."""
        return self.output_head(self.decode_hidden(enc, prefix))

    def cross_attention_weights(self, enc: EncoderOutput, prefix: torch.Tensor) -> List[torch.Tensor]:
        """Per-layer cross-attention weights (B, heads, T, slots)."""
        return self._run_decoder(enc, prefix)[1]

    def zero_output_head(self) -> None:
        """Zero the output head so every position predicts the uniform distribution."""
        with torch.no_grad():
            self.output_head.weight.zero_()
            self.output_head.bias.zero_()


def ce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """
    Mean over the batch of each sequence's summed token NLL, PAD excluded.

    Raises:
        EmptyAxisError: If a sequence is entirely padding
    """
    if logits.shape[:2] != labels.shape:
        raise ShapeMismatchError(f"logits {tuple(logits.shape)} do not match labels {tuple(labels.shape)}")
    valid = labels != PAD_ID
    if not valid.any(dim=1).all():
        raise EmptyAxisError("target is all padding")
    nll = -diffmath.log_softmax(logits, axis=-1).gather(-1, labels.clamp_min(0).unsqueeze(-1)).squeeze(-1)
    nll = nll * valid.to(nll.dtype)
    return nll.sum(dim=1).mean()


def _beam_prefixes(beams: Sequence[Tuple[List[int], float]]) -> torch.Tensor:
    return torch.tensor([[BOS_ID] + tokens for tokens, _ in beams], dtype=torch.long)


@torch.no_grad()
def generate(
    model: MultiModalExplainer,
    enc: EncoderOutput,
    beam_size: int = 2,
    max_len: int = 64,
) -> List[int]:
    """
    Length-normalized beam search for a single encoded sample.

    Hypotheses are ranked by cumulative log-probability divided by the
    number of scored tokens; ties go to the lower beam index, then the
    lower token id. A hypothesis ending in EOS is finished and its EOS
    counts as a scored token; one cut off at `max_len` scored no EOS.
    Search stops when `beam_size` hypotheses are finished, no live beam
    remains, or `max_len` tokens are generated.

    Returns:
        Generated token ids without BOS and EOS
    """
    if beam_size < 1:
        raise ShapeMismatchError("beam size must be at least 1")
    max_len = min(max_len, MAX_POSITIONS)
    beams: List[Tuple[List[int], float]] = [([], 0.0)]
    finished: List[Tuple[List[int], float]] = []

    for _ in range(max_len):
        logits = model.decode_logits(enc.repeat(len(beams)), _beam_prefixes(beams))[:, -1]
        log_probs = torch.log_softmax(logits.double(), dim=-1).numpy()
        totals = np.array([score for _, score in beams])[:, None] + log_probs
        lengths = np.array([len(tokens) + 1 for tokens, _ in beams], dtype=np.float64)[:, None]
        normalized = (totals / lengths).reshape(-1)
        order = np.argsort(-normalized, kind="stable")

        vocab = log_probs.shape[1]
        live: List[Tuple[List[int], float]] = []
        for flat in order:
            beam, token = divmod(int(flat), vocab)
            tokens, total = beams[beam][0], float(totals[beam, token])
            if token == EOS_ID:
                finished.append((tokens, total))
            else:
                live.append((tokens + [token], total))
            if len(live) == beam_size:
                break
        beams = live
        if len(finished) >= beam_size or not beams:
            break

    pool = [(tokens, total, len(tokens) + 1) for tokens, total in finished]
    pool += [(tokens, total, len(tokens)) for tokens, total in beams if len(tokens) >= max_len]
    if not pool:
        pool = [(tokens, total, max(len(tokens), 1)) for tokens, total in beams]
    best = max(range(len(pool)), key=lambda i: (pool[i][1] / pool[i][2], -i))
    tokens = pool[best][0]
    return tokens[:max_len]


@torch.no_grad()
def greedy_decode(model: MultiModalExplainer, enc: EncoderOutput, max_len: int = 64) -> List[int]:
    """Stepwise argmax decoding; stops at EOS or `max_len` tokens."""
    tokens: List[int] = []
    for _ in range(min(max_len, MAX_POSITIONS)):
        logits = model.decode_logits(enc, torch.tensor([[BOS_ID] + tokens]))[0, -1]
        token = int(torch.argmax(logits))
        if token == EOS_ID:
            break
        tokens.append(token)
    return tokens


@torch.no_grad()
def encode_ids(
    model: MultiModalExplainer,
    image_ids: Sequence[str],
    history_ids: Sequence[str],
    image_store: EmbeddingStore,
    review_store: Optional[EmbeddingStore],
) -> EncoderOutput:
    """Encode one sample given by image and history review ids."""
    config = model.config
    images, image_mask = _stack_slots([image_ids], image_store, config.max_images, image_store.dim)
    if config.use_reviews and review_store is not None:
        reviews, review_mask = _stack_slots([history_ids], review_store, config.max_history, review_store.dim)
        return model.encode(images, image_mask, reviews, review_mask)
    return model.encode(images, image_mask)


def build_model(config: ModelConfig, vocabulary: Vocabulary, image_store: EmbeddingStore,
                review_store: Optional[EmbeddingStore]) -> MultiModalExplainer:
    """Fill data-dependent sizes into `config` and build a fresh model."""
    sized = config.model_copy(update={
        "vocab": len(vocabulary),
        "image_dim": image_store.dim,
        "review_dim": review_store.dim if review_store is not None else 0,
    })
    return MultiModalExplainer(sized)
