"""
Automatic evaluation of generated explanations and image sets.

N-gram overlap (BLEU, NIST) comes from nltk; diversity (distinct-n,
visual corpus diversity), embedding alignment (mean-of-max classifier
confidence and cosine similarity between images and sentences), keyword
coverage and length histograms are computed here.
"""

import logging
from collections import Counter
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
from nltk.translate.bleu_score import corpus_bleu
from nltk.translate.nist_score import corpus_nist
from nltk.util import ngrams

from showcaseflow.config import EvaluationConfig
from showcaseflow.core.exceptions import EmptyAxisError, EmptyCorpusError, ReferenceMissingError, ShapeMismatchError
from showcaseflow.models.enums import KeywordClass
from showcaseflow.models.records import GenerationRecord
from showcaseflow.models.reports import CorpusDiversityReport, MetricReport, TextMetrics, as_percent
from showcaseflow.services.distill import AlignmentClassifier
from showcaseflow.services.embedding_store import EmbeddingStore, cosine_matrix
from showcaseflow.utils.text_utils import split_sentences

logger = logging.getLogger(__name__)

TokenSeq = Sequence[str]


def distinct_n(corpus: Sequence[TokenSeq], n: int) -> float:
    """
    Unique n-grams over total n-grams, pooled over the whole corpus.

    Raises:
        EmptyCorpusError: If the corpus is empty
        EmptyAxisError: If every sequence is shorter than n
    """
    if not corpus:
        raise EmptyCorpusError("distinct-n of an empty corpus")
    if n < 1:
        raise ShapeMismatchError("n must be at least 1")
    counts: Counter = Counter()
    for tokens in corpus:
        if len(tokens) >= n:
            counts.update(ngrams(list(tokens), n))
    total = sum(counts.values())
    if total == 0:
        raise EmptyAxisError(f"every sequence is shorter than {n}")
    return len(counts) / total


def _check_aligned(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq]) -> None:
    if len(candidates) != len(references):
        raise ShapeMismatchError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates or all(len(c) == 0 for c in candidates):
        raise EmptyCorpusError("empty candidate corpus")


def bleu_n(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq], n: int) -> float:
    """Corpus BLEU with uniform weights up to order n and one reference per candidate."""
    _check_aligned(candidates, references)
    weights = tuple(1.0 / n for _ in range(n))
    return float(corpus_bleu([[list(r)] for r in references], [list(c) for c in candidates], weights=weights))


def nist_n(candidates: Sequence[TokenSeq], references: Sequence[TokenSeq], n: int = 4) -> float:
    """
    Corpus NIST up to order n.

    Orders longer than every candidate have no n-grams to weigh, so n is
    capped at the longest candidate.
    """
    _check_aligned(candidates, references)
    order = min(n, max(len(c) for c in candidates))
    return float(corpus_nist([[list(r)] for r in references], [list(c) for c in candidates], n=order))


def _mean_of_max(scores: np.ndarray) -> float:
    """Mean over images (columns) of the max over sentences (rows)."""
    if scores.size == 0:
        raise EmptyCorpusError("empty image or sentence set")
    return float(scores.max(axis=0).mean())


def clip_align(images: np.ndarray, sentences: np.ndarray, classifier: AlignmentClassifier) -> float:
    """Mean over images of the best classifier confidence among the sentences."""
    images, sentences = np.atleast_2d(images), np.atleast_2d(sentences)
    if len(images) == 0 or len(sentences) == 0:
        raise EmptyCorpusError("empty image or sentence set")
    return _mean_of_max(classifier.score_matrix(sentences, images))


def clip_score(images: np.ndarray, sentences: np.ndarray) -> float:
    """Mean over images of the best cosine similarity among the sentences."""
    images, sentences = np.atleast_2d(images), np.atleast_2d(sentences)
    if len(images) == 0 or len(sentences) == 0:
        raise EmptyCorpusError("empty image or sentence set")
    return _mean_of_max(cosine_matrix(sentences, images))


def corpus_diversity(dataset: Iterable[Tuple[str, str, np.ndarray]]) -> CorpusDiversityReport:
    """
    Visual diversity of a dataset at three levels.

    Pairs are pooled across businesses: intra-business over every image
    pair of a business, inter-user over pairs from different users of the
    same business, intra-user over pairs within one (user, business) cell.
    A level with no valid pair is None.

    Args:
        dataset: (business_id, user_id, image vectors) entries
    """
    by_business: Dict[str, List[Tuple[str, np.ndarray]]] = {}
    for business_id, user_id, vectors in dataset:
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if vectors.size == 0:
            continue
        by_business.setdefault(business_id, []).extend((user_id, v) for v in vectors)
    if not by_business:
        raise EmptyCorpusError("corpus diversity of an empty dataset")

    sums = {"business": 0.0, "inter": 0.0, "intra": 0.0}
    counts = {"business": 0, "inter": 0, "intra": 0}
    for business_id in sorted(by_business):
        entries = by_business[business_id]
        if len(entries) < 2:
            continue
        users = np.array([u for u, _ in entries])
        dis = 1.0 - cosine_matrix(np.stack([v for _, v in entries]))
        upper = np.triu(np.ones(dis.shape, dtype=bool), k=1)
        same_user = users[:, None] == users[None, :]
        for key, mask in (("business", upper), ("inter", upper & ~same_user), ("intra", upper & same_user)):
            sums[key] += float(dis[mask].sum())
            counts[key] += int(mask.sum())

    def level(key: str) -> Optional[float]:
        return sums[key] / counts[key] if counts[key] else None

    return CorpusDiversityReport(intra_business=level("business"), inter_user=level("inter"), intra_user=level("intra"))


def keyword_coverage(
    generated: TokenSeq,
    reference: TokenSeq,
    keyword_classes: Mapping[str, Iterable[str]],
) -> Dict[str, Optional[float]]:
    """
    Per-class fraction of the reference's keywords found in the generated text.

    Only keywords that occur in the reference count. A class with no such
    keyword is None.
    """
    found, total = _keyword_counts(generated, reference, keyword_classes)
    return {cls: (found[cls] / total[cls] if total[cls] else None) for cls in total}


def _keyword_counts(
    generated: TokenSeq,
    reference: TokenSeq,
    keyword_classes: Mapping[str, Iterable[str]],
) -> Tuple[Dict[str, int], Dict[str, int]]:
    generated_set = set(generated)
    reference_set = set(reference)
    found: Dict[str, int] = {}
    total: Dict[str, int] = {}
    for cls in [c.value for c in KeywordClass] + sorted(set(keyword_classes) - {c.value for c in KeywordClass}):
        keywords = {k for k in keyword_classes.get(cls, ()) if k in reference_set}
        total[cls] = len(keywords)
        found[cls] = len(keywords & generated_set)
    return found, total


def corpus_keyword_coverage(
    generated: Sequence[TokenSeq],
    references: Sequence[TokenSeq],
    keywords: Sequence[Mapping[str, Iterable[str]]],
) -> Dict[str, Optional[float]]:
    """Keyword coverage pooled over a corpus: found keywords over reference keywords per class."""
    found_all: Counter = Counter()
    total_all: Counter = Counter()
    classes: List[str] = []
    for gen, ref, kw in zip(generated, references, keywords):
        found, total = _keyword_counts(gen, ref, kw)
        for cls in total:
            if cls not in classes:
                classes.append(cls)
        found_all.update(found)
        total_all.update(total)
    if not classes:
        classes = [c.value for c in KeywordClass]
    return {cls: (found_all[cls] / total_all[cls] if total_all[cls] else None) for cls in classes}


def length_histogram(corpus: Sequence[TokenSeq], bins: int = 6, width: int = 10) -> List[int]:
    """
    Counts of sequence lengths in half-open bins [0, w), [w, 2w), ...; the
    last bin is closed at bins * w.
    """
    if not corpus:
        raise EmptyCorpusError("length histogram of an empty corpus")
    counts = [0] * bins
    for tokens in corpus:
        counts[min(len(tokens) // width, bins - 1)] += 1
    return counts


class SentenceEmbedder(Protocol):
    """Anything that maps a sentence (tokens, optional store id) to a vector."""

    @property
    def dim(self) -> int: ...

    def embed(self, tokens: TokenSeq, ref_id: Optional[str] = None) -> Optional[np.ndarray]: ...


class LexiconSentenceEmbedder:
    """
    Embeds a sentence as the mean of its tokens' vectors in a lexicon store.

    Tokens missing from the lexicon are ignored; a sentence with no known
    token has no embedding.
    """

    def __init__(self, lexicon: EmbeddingStore):
        self.lexicon = lexicon

    @property
    def dim(self) -> int:
        return self.lexicon.dim

    def embed(self, tokens: TokenSeq, ref_id: Optional[str] = None) -> Optional[np.ndarray]:
        known = [t for t in tokens if t in self.lexicon]
        if not known:
            return None
        vector = self.lexicon.vectors(known).astype(np.float64).mean(axis=0)
        return vector if np.linalg.norm(vector) > 0 else None


class StoreSentenceEmbedder:
    """Looks generated sentences up by id in a precomputed sentence store."""

    def __init__(self, store: EmbeddingStore):
        self.store = store

    @property
    def dim(self) -> int:
        return self.store.dim

    def embed(self, tokens: TokenSeq, ref_id: Optional[str] = None) -> Optional[np.ndarray]:
        if ref_id is None or ref_id not in self.store:
            return None
        return self.store.vector(ref_id).astype(np.float64)


def _sentence_matrix(embedder: SentenceEmbedder, sentences: Sequence[Tuple[TokenSeq, Optional[str]]]) -> np.ndarray:
    vectors = [embedder.embed(tokens, ref_id) for tokens, ref_id in sentences]
    vectors = [v for v in vectors if v is not None]
    return np.stack(vectors) if vectors else np.zeros((0, embedder.dim))


def _embedding_metrics(
    pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
    classifier: Optional[AlignmentClassifier],
) -> Tuple[Optional[float], Optional[float]]:
    usable = [(images, sentences) for images, sentences in pairs if len(images) and len(sentences)]
    if not usable:
        return None, None
    align = float(np.mean([clip_align(i, s, classifier) for i, s in usable])) if classifier is not None else None
    cosine = float(np.mean([clip_score(i, s) for i, s in usable]))
    return align, cosine


def _text_metrics(
    corpus: Sequence[TokenSeq],
    references: Sequence[TokenSeq],
    keywords: Sequence[Mapping[str, Iterable[str]]],
    embedding_pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
    classifier: Optional[AlignmentClassifier],
    config: EvaluationConfig,
    with_ngrams: bool,
) -> TextMetrics:
    def safe_distinct(n: int) -> Optional[float]:
        try:
            return as_percent(distinct_n(corpus, n))
        except (EmptyAxisError, EmptyCorpusError):
            return None

    metrics = TextMetrics(
        distinct1=safe_distinct(1),
        distinct2=safe_distinct(2),
        keyword_coverage={k: as_percent(v) for k, v in corpus_keyword_coverage(corpus, references, keywords).items()},
        length_histogram=length_histogram(corpus, config.histogram_bins, config.histogram_width),
    )
    align, cosine = _embedding_metrics(embedding_pairs, classifier)
    metrics.clip_align = as_percent(align)
    metrics.clip_score = as_percent(cosine)

    if with_ngrams and any(len(c) for c in corpus):
        bleu = {n: as_percent(bleu_n(corpus, references, n)) for n in config.bleu_orders}
        metrics.bleu1 = bleu.get(1)
        metrics.bleu4 = bleu.get(4)
        metrics.nist4 = round(nist_n(corpus, references, config.nist_order), 4)
    return metrics


def evaluate_corpus(
    records: Sequence[GenerationRecord],
    image_store: EmbeddingStore,
    embedder: SentenceEmbedder,
    classifier: Optional[AlignmentClassifier] = None,
    config: Optional[EvaluationConfig] = None,
) -> MetricReport:
    """
    Full metric report for generated explanations, plus a reference row.

    Args:
        records: Generations with their references and keyword annotations
        image_store: Image vectors of each record's showcase
        embedder: Sentence embedder with `embed(tokens, ref_id)` and `dim`
        classifier: Alignment classifier for the confidence-based metric
        config: Evaluation settings

    Raises:
        EmptyCorpusError: If there are no records
        ReferenceMissingError: If a record has no reference
    """
    config = config or EvaluationConfig()
    if not records:
        raise EmptyCorpusError("no generations to evaluate")
    for record in records:
        if not record.reference:
            raise ReferenceMissingError(f"missing reference for {record.review_id}")

    generated = [r.generated for r in records]
    references = [r.reference for r in records]
    keywords = [r.keywords for r in records]

    generated_pairs = []
    reference_pairs = []
    for record in records:
        images = image_store.vectors(record.images).astype(np.float64)
        if record.sentences:
            sentences = [(s.tokens, s.ref.id) for s in record.sentences]
        else:
            sentences = [(tokens, None) for tokens in split_sentences(record.generated)]
        generated_pairs.append((images, _sentence_matrix(embedder, sentences)))
        reference_pairs.append((images, _sentence_matrix(embedder, [(t, None) for t in split_sentences(record.reference)])))

    generated_metrics = _text_metrics(generated, references, keywords, generated_pairs, classifier, config, True)
    reference_metrics = _text_metrics(references, references, keywords, reference_pairs, classifier, config, False)

    logger.info(
        f"Evaluated {len(records)} generations: BLEU-1={generated_metrics.bleu1} "
        f"Distinct-2={generated_metrics.distinct2} CLIP-Align={generated_metrics.clip_align}"
    )
    return MetricReport(records=len(records), reference=reference_metrics, **generated_metrics.model_dump())
