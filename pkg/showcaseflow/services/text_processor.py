"""
Text preprocessing service for the explanation generator.

This module owns the token vocabulary, the entity vocabulary used for
entity-swap negatives, and the conversion of distilled explanation
records into tokenized generator samples.
"""

import hashlib
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from showcaseflow.core.exceptions import DuplicateIdError, EmptyCorpusError, UsageError, VocabularyMismatchError
from showcaseflow.models.records import EntitySpan, ExplanationRecord, ReviewRecord
from showcaseflow.utils.text_utils import find_subsequence, tokenize
from showcaseflow.utils.validation import require_file

logger = logging.getLogger(__name__)

BOS_ID = 0
EOS_ID = 1
PAD_ID = 2
UNK_ID = 3
SPECIAL_TOKENS: Tuple[str, ...] = ("<bos>", "<eos>", "<pad>", "<unk>")


class Vocabulary:
    """
    Token <-> id mapping. Line number in the vocabulary file is the id.

    Ids 0-3 are reserved for BOS, EOS, PAD and UNK.
    """

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise VocabularyMismatchError(
                f"vocabulary must start with the reserved tokens {', '.join(SPECIAL_TOKENS)}"
            )
        self._tokens: List[str] = list(tokens)
        self._ids: Dict[str, int] = {}
        for idx, token in enumerate(self._tokens):
            if token in self._ids:
                raise DuplicateIdError(f"duplicate vocabulary token: {token!r}")
            self._ids[token] = idx

    @classmethod
    def build(cls, corpus: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        """
        Build a vocabulary from tokenized text.

        Tokens are ordered by decreasing frequency, then alphabetically, so
        the same corpus always yields the same ids.
        """
        counts: Counter = Counter()
        for tokens in corpus:
            counts.update(tokens)
        ranked = sorted(
            (token for token, count in counts.items() if count >= min_count and token not in SPECIAL_TOKENS),
            key=lambda token: (-counts[token], token),
        )
        if not ranked:
            raise EmptyCorpusError("cannot build a vocabulary from an empty corpus")
        vocab = cls(list(SPECIAL_TOKENS) + ranked)
        logger.info(f"Built vocabulary of {len(vocab)} tokens")
        return vocab

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> List[str]:
        return list(self._tokens)

    def token_id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.token_id(token) for token in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Token strings for `ids`, dropping BOS, EOS and PAD."""
        out = []
        for idx in ids:
            idx = int(idx)
            if idx in (BOS_ID, EOS_ID, PAD_ID):
                continue
            if not 0 <= idx < len(self._tokens):
                raise VocabularyMismatchError(f"token id {idx} outside a vocabulary of {len(self)}")
            out.append(self._tokens[idx])
        return out

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self._tokens).encode("utf-8")).hexdigest()

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self._tokens) + "\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        path = require_file(path, "vocabulary")
        with open(path, "r", encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


class EntityVocabulary:
    """Entity strings available for entity-swap negatives, one per line on disk."""

    def __init__(self, entities: Sequence[str]):
        unique = sorted(set(e for e in entities if e.strip()))
        self._entities: List[str] = unique
        self._tokens: Dict[str, List[str]] = {entity: tokenize(entity) for entity in unique}

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, entity: object) -> bool:
        return entity in self._tokens

    @property
    def entities(self) -> List[str]:
        return list(self._entities)

    def tokens_for(self, entity: str) -> List[str]:
        return list(self._tokens.get(entity) or tokenize(entity))

    def sample_other(self, entity: str, rng: np.random.Generator) -> str:
        """
        Uniformly sample an entity different from `entity`.

        Raises:
            UsageError: If fewer than two entities are available
        """
        if len(self._entities) < 2:
            raise UsageError("entity vocabulary needs at least 2 entities")
        choices = [e for e in self._entities if e != entity]
        return choices[int(rng.integers(len(choices)))]

    @classmethod
    def build(cls, records: Iterable[ExplanationRecord]) -> "EntityVocabulary":
        return cls([e for record in records for sentence in record.sentences for e in sentence.entities])

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write("".join(f"{entity}\n" for entity in self._entities))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EntityVocabulary":
        path = require_file(path, "entity vocabulary")
        with open(path, "r", encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f])


class TextProcessor:
    """
    Turns explanation records into generator samples.

    Sentences are tokenized and concatenated, EOS is appended and the
    sequence is truncated to `max_len` with EOS kept last. Entity mentions
    are located inside their own sentence and become half-open spans.
    """

    def __init__(self, vocabulary: Vocabulary, max_len: int = 64, max_images: int = 5, max_history: int = 10):
        self.vocabulary = vocabulary
        self.max_len = max_len
        self.max_images = max_images
        self.max_history = max_history

    def tokens_and_spans(self, record: ExplanationRecord) -> Tuple[List[str], List[EntitySpan]]:
        tokens: List[str] = []
        spans: List[EntitySpan] = []
        for sentence in record.sentences:
            sentence_tokens = tokenize(sentence.text)
            offset = len(tokens)
            cursor = 0
            for entity in sentence.entities:
                needle = tokenize(entity)
                start = find_subsequence(sentence_tokens, needle, cursor)
                if start < 0:
                    logger.debug(f"Entity {entity!r} not found in review {record.review_id}")
                    continue
                spans.append(EntitySpan(start=offset + start, end=offset + start + len(needle), entity=entity))
                cursor = start + len(needle)
            tokens.extend(sentence_tokens)
        return tokens, spans

    def to_review_record(self, record: ExplanationRecord) -> ReviewRecord:
        """
        Build the tokenized training sample for one explanation record.

        Raises:
            EmptyCorpusError: If the explanation has no tokens
        """
        tokens, spans = self.tokens_and_spans(record)
        if not tokens:
            raise EmptyCorpusError(f"explanation {record.review_id} has no tokens")
        body = self.vocabulary.encode(tokens)[: self.max_len - 1]
        target = body + [EOS_ID]
        spans = [span for span in spans if span.end <= len(body)]

        keywords: Dict[str, List[str]] = {}
        for sentence in record.sentences:
            for cls_name, words in sentence.keywords.items():
                keywords.setdefault(cls_name, []).extend(w.lower() for w in words)

        return ReviewRecord(
            review_id=record.review_id,
            user_id=record.user_id,
            business_id=record.business_id,
            history=record.history_ids[: self.max_history],
            images=record.image_ids[: self.max_images],
            target=target,
            entity_spans=spans,
            keywords={k: sorted(set(v)) for k, v in keywords.items()},
        )

    def reference_tokens(self, record: ExplanationRecord) -> List[str]:
        """Reference explanation as tokens, truncated like training targets."""
        tokens, _ = self.tokens_and_spans(record)
        return tokens[: self.max_len - 1]


def build_vocabularies(
    records: Sequence[ExplanationRecord],
    min_count: int = 1,
) -> Tuple[Vocabulary, EntityVocabulary]:
    """Token and entity vocabularies of an explanation corpus."""
    if not records:
        raise EmptyCorpusError("explanation corpus is empty")
    corpus = [tokenize(sentence.text) for record in records for sentence in record.sentences]
    return Vocabulary.build(corpus, min_count=min_count), EntityVocabulary.build(records)


def load_or_build_vocabularies(
    records: Sequence[ExplanationRecord],
    vocabulary_path: Path,
    entity_path: Path,
    rebuild: bool = False,
) -> Tuple[Vocabulary, EntityVocabulary]:
    """Load both vocabularies from disk, building and saving them if absent."""
    if not rebuild and Path(vocabulary_path).is_file() and Path(entity_path).is_file():
        return Vocabulary.load(vocabulary_path), EntityVocabulary.load(entity_path)
    vocab, entities = build_vocabularies(records)
    vocab.save(vocabulary_path)
    entities.save(entity_path)
    logger.info(f"Wrote vocabulary to {vocabulary_path} and {len(entities)} entities to {entity_path}")
    return vocab, entities
