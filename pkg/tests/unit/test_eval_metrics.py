"""
Unit tests for text and embedding metrics, checked against direct enumeration.
"""

import math
from collections import Counter

import numpy as np
import pytest

from showcaseflow.core.exceptions import EmptyAxisError, EmptyCorpusError, ReferenceMissingError
from showcaseflow.models.enums import EmbeddingKind
from showcaseflow.models.records import EmbeddingRef, GeneratedSentence, GenerationRecord
from showcaseflow.services.distill import AlignmentClassifier
from showcaseflow.services.embedding_store import EmbeddingStore
from showcaseflow.services.eval_metrics import (
    LexiconSentenceEmbedder,
    StoreSentenceEmbedder,
    bleu_n,
    clip_align,
    clip_score,
    corpus_diversity,
    corpus_keyword_coverage,
    distinct_n,
    evaluate_corpus,
    keyword_coverage,
    length_histogram,
    nist_n,
)

WORDS = ["a", "b", "c", "d", "e"]


def grams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def naive_distinct(corpus, n):
    all_grams = [g for tokens in corpus for g in grams(tokens, n)]
    return len(set(all_grams)) / len(all_grams)


def naive_bleu(candidates, references, n):
    log_total = 0.0
    for order in range(1, n + 1):
        matched = total = 0
        for cand, ref in zip(candidates, references):
            cand_counts, ref_counts = Counter(grams(cand, order)), Counter(grams(ref, order))
            matched += sum(min(count, ref_counts[g]) for g, count in cand_counts.items())
            total += sum(cand_counts.values())
        if matched == 0:
            return 0.0
        log_total += math.log(matched / total) / n
    c = sum(len(x) for x in candidates)
    r = sum(len(x) for x in references)
    return math.exp(min(0.0, 1.0 - r / c)) * math.exp(log_total)


def naive_mean_of_max(scores):
    n_sentences, n_images = scores.shape
    return sum(max(scores[s, i] for s in range(n_sentences)) for i in range(n_images)) / n_images


def naive_diversity(dataset):
    def dis(u, v):
        return 1.0 - float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

    flat = [(b, u, v) for b, u, vectors in dataset for v in vectors]
    sums, counts = Counter(), Counter()
    for x in range(len(flat)):
        for y in range(x + 1, len(flat)):
            (bx, ux, vx), (by, uy, vy) = flat[x], flat[y]
            if bx != by:
                continue
            d = dis(vx, vy)
            sums["business"] += d
            counts["business"] += 1
            key = "intra" if ux == uy else "inter"
            sums[key] += d
            counts[key] += 1
    return {k: (sums[k] / counts[k] if counts[k] else None) for k in ("business", "inter", "intra")}


def random_corpus(rng, size, min_len=1, max_len=8):
    return [[WORDS[int(i)] for i in rng.integers(0, len(WORDS), int(rng.integers(min_len, max_len + 1)))]
            for _ in range(size)]


class TestDistinct:
    """Tests for distinct-n."""

    @pytest.mark.parametrize("corpus,n,expected", [
        ([["a", "a", "a", "a"]], 1, 0.25),
        ([["the", "cat", "sat"]], 1, 1.0),
        ([["a", "b", "a", "b"]], 2, 2 / 3),
    ])
    def test_examples(self, corpus, n, expected):
        assert distinct_n(corpus, n) == pytest.approx(expected)

    def test_matches_enumeration(self, rng):
        for _ in range(100):
            corpus = random_corpus(rng, int(rng.integers(1, 51)), min_len=2)
            for n in (1, 2):
                assert distinct_n(corpus, n) == pytest.approx(naive_distinct(corpus, n), abs=1e-9)

    def test_all_sequences_too_short(self):
        with pytest.raises(EmptyAxisError):
            distinct_n([["a"], ["b"]], 2)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpusError):
            distinct_n([], 1)


class TestNgramOverlap:
    """Tests for BLEU and NIST."""

    def test_identical_corpora(self):
        corpus = [["the", "cake", "was", "sweet"], ["a", "latte", "with", "foam"]]
        assert bleu_n(corpus, corpus, 4) == pytest.approx(1.0)

    def test_clipped_unigram_precision(self):
        assert bleu_n([["the", "the", "the"]], [["the", "cat"]], 1) == pytest.approx(1 / 3)

    def test_zero_overlap(self):
        assert bleu_n([["x", "y"]], [["a", "b"]], 1) == 0.0
        assert nist_n([["x", "y"]], [["a", "b"]]) == 0.0

    def test_bleu_matches_enumeration(self, rng):
        for _ in range(100):
            size = int(rng.integers(1, 51))
            candidates = random_corpus(rng, size, min_len=2)
            references = random_corpus(rng, size, min_len=2)
            for n in (1, 2):
                assert bleu_n(candidates, references, n) == pytest.approx(
                    naive_bleu(candidates, references, n), abs=1e-9
                )

    def test_bleu1_at_least_bleu4(self, rng):
        candidates = random_corpus(rng, 20, min_len=4)
        references = random_corpus(rng, 20, min_len=4)
        assert bleu_n(candidates, references, 1) >= bleu_n(candidates, references, 4)

    def test_nist_three_unique_tokens(self):
        # Each unigram carries log2(3) bits; longer n-grams carry none.
        assert nist_n([["a", "b", "c"]], [["a", "b", "c"]]) == pytest.approx(math.log2(3), rel=1e-9)

    def test_nist_penalizes_padding(self):
        reference = [["a", "b", "c", "d"]]
        short = nist_n([["a", "b", "c", "d"]], reference)
        padded = nist_n([["a", "b", "c", "d", "x", "y", "z", "w"]], reference)
        assert padded < short


class TestEmbeddingMetrics:
    """Tests for classifier- and cosine-based alignment."""

    def test_constant_classifier(self):
        classifier = AlignmentClassifier(weights=np.zeros(4), bias=math.log(9.0))
        assert clip_align(np.ones((3, 2)), np.ones((2, 2)), classifier) == pytest.approx(0.9)

    def test_clip_align_matches_enumeration(self, rng):
        for _ in range(100):
            classifier = AlignmentClassifier(weights=rng.standard_normal(6), bias=float(rng.standard_normal()))
            images = rng.standard_normal((int(rng.integers(1, 5)), 3))
            sentences = rng.standard_normal((int(rng.integers(1, 5)), 3))
            oracle = naive_mean_of_max(classifier.score_matrix(sentences, images))
            assert clip_align(images, sentences, classifier) == pytest.approx(oracle, abs=1e-12)

    def test_clip_score_matches_enumeration(self, rng):
        for _ in range(100):
            images = rng.standard_normal((int(rng.integers(1, 5)), 3))
            sentences = rng.standard_normal((int(rng.integers(1, 5)), 3))
            cos = np.array([[s @ i / (np.linalg.norm(s) * np.linalg.norm(i)) for i in images] for s in sentences])
            assert clip_score(images, sentences) == pytest.approx(naive_mean_of_max(cos), abs=1e-9)

    def test_clip_score_extremes(self):
        images = np.eye(3)
        assert clip_score(images, images) == pytest.approx(1.0)
        assert clip_score(images[:2], images[2:]) == pytest.approx(0.0)

    def test_order_invariance_and_superset(self, rng):
        classifier = AlignmentClassifier(weights=rng.standard_normal(6), bias=0.0)
        images, sentences = rng.standard_normal((3, 3)), rng.standard_normal((4, 3))
        base = clip_align(images, sentences, classifier)
        assert clip_align(images[::-1], sentences[::-1], classifier) == pytest.approx(base, abs=1e-12)
        extended = np.vstack([sentences, rng.standard_normal((1, 3))])
        assert clip_align(images, extended, classifier) >= base

    def test_empty_sets(self):
        with pytest.raises(EmptyCorpusError):
            clip_score(np.zeros((0, 3)), np.ones((1, 3)))


class TestCorpusDiversity:
    """Tests for intra-business, inter-user and intra-user diversity."""

    def test_identical_images(self):
        v = np.array([[1.0, 2.0], [1.0, 2.0]])
        report = corpus_diversity([("b0", "u0", v), ("b0", "u1", v)])
        assert (report.intra_business, report.inter_user, report.intra_user) == pytest.approx((0.0, 0.0, 0.0))

    def test_one_image_per_user_leaves_intra_user_undefined(self):
        report = corpus_diversity([("b0", "u0", np.array([[1.0, 0.0]])), ("b0", "u1", np.array([[0.0, 1.0]]))])
        assert report.intra_user is None
        assert report.inter_user == pytest.approx(1.0)

    def test_matches_enumeration(self, rng):
        for _ in range(100):
            dataset = [
                (f"b{int(rng.integers(0, 3))}", f"u{int(rng.integers(0, 3))}",
                 rng.standard_normal((int(rng.integers(1, 4)), 4)))
                for _ in range(int(rng.integers(1, 8)))
            ]
            oracle = naive_diversity(dataset)
            if oracle["business"] is None:
                continue
            report = corpus_diversity(dataset)
            for got, expected in ((report.intra_business, oracle["business"]),
                                  (report.inter_user, oracle["inter"]),
                                  (report.intra_user, oracle["intra"])):
                if expected is None:
                    assert got is None
                else:
                    assert got == pytest.approx(expected, abs=1e-9)

    def test_empty_dataset(self):
        with pytest.raises(EmptyCorpusError):
            corpus_diversity([])


class TestCoverageAndLength:
    """Tests for keyword coverage and the length histogram."""

    def test_keyword_coverage(self):
        reference = ["great", "cake", "and", "tea", "very", "fresh"]
        classes = {"noun": ["cake", "tea", "pie", "scone"], "adj": ["great"], "adv": []}
        coverage = keyword_coverage(["cake", "was", "great"], reference, classes)
        assert coverage["noun"] == pytest.approx(0.5)
        assert coverage["adj"] == 1.0
        assert coverage["adv"] is None

    def test_half_of_four_nouns(self):
        reference = ["w", "x", "y", "z"]
        assert keyword_coverage(["w", "x"], reference, {"noun": reference})["noun"] == 0.5

    def test_corpus_coverage_is_pooled(self):
        coverage = corpus_keyword_coverage(
            [["a"], ["b"]], [["a", "c"], ["b"]], [{"noun": ["a", "c"]}, {"noun": ["b"]}]
        )
        assert coverage["noun"] == pytest.approx(2 / 3)

    def test_histogram_bins(self):
        corpus = [["x"] * length for length in (5, 15, 25, 35, 45, 55)]
        assert length_histogram(corpus) == [1, 1, 1, 1, 1, 1]
        assert length_histogram([["x"] * 10]) == [0, 1, 0, 0, 0, 0]
        assert length_histogram([["x"] * 60]) == [0, 0, 0, 0, 0, 1]


class TestEvaluateCorpus:
    """Tests for the full metric report."""

    @pytest.fixture
    def setup(self):
        images = EmbeddingStore(["i0", "i1"], np.eye(2), EmbeddingKind.IMAGE)
        lexicon = EmbeddingStore(["cake", "latte"], np.eye(2), EmbeddingKind.SENTENCE)
        records = [
            GenerationRecord(review_id="r0", user_id="u0", business_id="b0", images=["i0"],
                             generated=["the", "cake", "."], reference=["the", "cake", "."],
                             keywords={"noun": ["cake"]}),
            GenerationRecord(review_id="r1", user_id="u1", business_id="b0", images=["i1"],
                             generated=["a", "latte", "."], reference=["a", "latte", "."],
                             keywords={"noun": ["latte"]}),
        ]
        return records, images, LexiconSentenceEmbedder(lexicon)

    def test_generated_equals_reference(self, setup):
        records, images, embedder = setup
        report = evaluate_corpus(records, images, embedder)
        assert report.bleu1 == 100.0
        assert report.distinct1 == report.reference.distinct1
        assert report.distinct2 == report.reference.distinct2
        assert report.clip_score == 100.0
        assert report.keyword_coverage["noun"] == 100.0
        assert report.clip_align is None
        assert report.records == 2
        assert report.reference.bleu1 is None

    def test_classifier_enables_clip_align(self, setup):
        records, images, embedder = setup
        classifier = AlignmentClassifier(weights=np.zeros(4), bias=0.0)
        assert evaluate_corpus(records, images, embedder, classifier).clip_align == 50.0

    def test_store_embedder_uses_sentence_refs(self, setup):
        records, images, _ = setup
        store = EmbeddingStore(["r0:0", "r1:0"], np.array([[1.0, 0.0], [1.0, 0.0]]), EmbeddingKind.SENTENCE)
        for record in records:
            record.sentences = [GeneratedSentence(
                tokens=record.generated, ref=EmbeddingRef(id=f"{record.review_id}:0", kind=EmbeddingKind.SENTENCE),
            )]
        report = evaluate_corpus(records, images, StoreSentenceEmbedder(store))
        assert report.clip_score == 50.0

    def test_missing_reference(self, setup):
        records, images, embedder = setup
        records[0].reference = []
        with pytest.raises(ReferenceMissingError):
            evaluate_corpus(records, images, embedder)
