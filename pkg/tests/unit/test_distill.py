"""
Unit tests for the alignment classifier and explanation distillation.
"""

import math

import numpy as np
import pytest
import torch

from showcaseflow.core.exceptions import DegenerateLabelsError, EmptyCorpusError, ShapeMismatchError
from showcaseflow.models.enums import DataSplit, EmbeddingKind
from showcaseflow.models.records import AlignedPair, RawReview, ReviewSentence
from showcaseflow.services.distill import (
    AlignmentClassifier,
    class_weights,
    distill_corpus,
    distill_review,
    eval_classifier,
    score,
    split_pairs,
    train_classifier,
    user_histories,
    weighted_bce,
)
from showcaseflow.services.embedding_store import EmbeddingStore

DIM = 6


@pytest.fixture
def separable(rng):
    """Sentences carrying a planted direction are descriptive, the rest are not."""
    direction = np.zeros(DIM)
    direction[0] = 1.0
    n_sentences, n_images = 40, 8
    descriptive = np.arange(n_sentences) % 2 == 0
    sentences = 0.1 * rng.standard_normal((n_sentences, DIM)) + np.where(descriptive, 1.0, -1.0)[:, None] * direction
    images = rng.standard_normal((n_images, DIM))
    sentence_store = EmbeddingStore([f"s{i}" for i in range(n_sentences)], sentences, EmbeddingKind.SENTENCE)
    image_store = EmbeddingStore([f"i{j}" for j in range(n_images)], images, EmbeddingKind.IMAGE)
    pairs = [
        AlignedPair(sentence_id=f"s{i}", image_id=f"i{j}", label=int(descriptive[i]))
        for i in range(n_sentences)
        for j in range(0, n_images, 2)
    ]
    return pairs, sentence_store, image_store


class TestAlignmentClassifier:
    """Tests for scoring and fitting."""

    def test_score_strictly_inside_unit_interval(self):
        classifier = AlignmentClassifier(weights=np.full(2 * DIM, 2.5), bias=0.0)
        high = score(classifier, np.ones(DIM), np.ones(DIM))
        low = score(classifier, -np.ones(DIM), -np.ones(DIM))
        assert 0.0 < low < 0.5 < high < 1.0

    def test_zero_weights_score_half(self):
        classifier = AlignmentClassifier(weights=np.zeros(2 * DIM), bias=0.0)
        assert score(classifier, np.ones(DIM), np.ones(DIM)) == pytest.approx(0.5)

    def test_dimension_checked(self):
        classifier = AlignmentClassifier(weights=np.zeros(2 * DIM), bias=0.0)
        with pytest.raises(ShapeMismatchError):
            score(classifier, np.ones(DIM + 1), np.ones(DIM))

    def test_odd_weight_length_rejected(self):
        with pytest.raises(ShapeMismatchError):
            AlignmentClassifier(weights=np.zeros(5), bias=0.0)

    def test_parameters_round_trip(self):
        classifier = AlignmentClassifier(weights=np.arange(2 * DIM, dtype=float), bias=0.25)
        restored = AlignmentClassifier.from_parameters(classifier.parameters())
        assert restored.to_bytes() == classifier.to_bytes()

    def test_learns_separable_data(self, separable):
        pairs, sentences, images = separable
        classifier = train_classifier(pairs, sentences, images, epochs=300, lr=0.5, seed=3)
        report = eval_classifier(classifier, pairs, sentences, images, split="train")
        assert report.auc >= 0.95
        assert report.f1 >= 0.9
        assert classifier.loss_history[-1] < classifier.loss_history[0]

    def test_training_is_deterministic(self, separable):
        pairs, sentences, images = separable
        a = train_classifier(pairs, sentences, images, epochs=20, seed=5)
        b = train_classifier(pairs, sentences, images, epochs=20, seed=5)
        assert a.to_bytes() == b.to_bytes()

    def test_degenerate_labels(self, separable):
        pairs, sentences, images = separable
        positives = [p for p in pairs if p.label == 1]
        with pytest.raises(DegenerateLabelsError):
            train_classifier(positives, sentences, images)
        classifier = AlignmentClassifier(weights=np.zeros(2 * DIM), bias=0.0)
        with pytest.raises(DegenerateLabelsError):
            eval_classifier(classifier, positives, sentences, images)

    def test_empty_pairs(self, separable):
        _, sentences, images = separable
        with pytest.raises(EmptyCorpusError):
            train_classifier([], sentences, images)


class TestSplitPairs:
    """Tests for the stratified split."""

    def test_partitions_cover_everything_once(self, separable):
        pairs = separable[0]
        train, val, test = split_pairs(pairs, seed=1)
        keys = [(p.sentence_id, p.image_id) for p in train + val + test]
        assert sorted(keys) == sorted((p.sentence_id, p.image_id) for p in pairs)

    def test_each_partition_keeps_both_labels(self, separable):
        for part in split_pairs(separable[0], seed=1):
            assert {p.label for p in part} == {0, 1}

    def test_seeded(self, separable):
        assert split_pairs(separable[0], seed=9) == split_pairs(separable[0], seed=9)


def make_review(review_id, user_id, sentence_ids, image_ids, split=DataSplit.TRAIN):
    return RawReview(
        review_id=review_id,
        user_id=user_id,
        business_id="b0",
        split=split,
        sentences=[ReviewSentence(sentence_id=s, text=f"sentence {s}.") for s in sentence_ids],
        image_ids=list(image_ids),
    )


class TestDistillation:
    """Tests for pair extraction and explanation records."""

    @pytest.fixture
    def trained(self, separable):
        pairs, sentences, images = separable
        return train_classifier(pairs, sentences, images, epochs=300, lr=0.5, seed=3), sentences, images

    def test_threshold_is_monotone(self, trained):
        classifier, sentences, images = trained
        review = make_review("r0", "u0", [f"s{i}" for i in range(10)], ["i0", "i1", "i2"])
        kept = [
            {(p.sentence_idx, p.image_id) for p in distill_review(review, t, classifier, sentences, images)}
            for t in (0.1, 0.3, 0.5, 0.7, 0.9)
        ]
        for looser, stricter in zip(kept, kept[1:]):
            assert stricter <= looser

    def test_pairs_ordered_and_scored(self, trained):
        classifier, sentences, images = trained
        review = make_review("r0", "u0", [f"s{i}" for i in range(6)], ["i3", "i1"])
        pairs = distill_review(review, 0.5, classifier, sentences, images)
        order = [(p.sentence_idx, review.image_ids.index(p.image_id)) for p in pairs]
        assert order == sorted(order)
        assert all(0.5 <= p.score < 1.0 for p in pairs)
        assert {p.sentence_idx for p in pairs} <= {0, 2, 4}

    def test_corpus_drops_reviews_without_pairs(self, trained):
        classifier, sentences, images = trained
        reviews = [
            make_review("r0", "u0", ["s0", "s1"], ["i0"]),
            make_review("r1", "u0", ["s1", "s3"], ["i0"]),
            make_review("r2", "u0", ["s5", "s4"], ["i1", "i2"]),
        ]
        pairs, records = distill_corpus(reviews, 0.5, classifier, sentences, images)
        assert [r.review_id for r in records] == ["r0", "r2"]
        assert {p.review_id for p in pairs} == {"r0", "r2"}
        assert [s.sentence_id for s in records[1].sentences] == ["s4"]
        assert records[0].history_ids == ["r1", "r2"]

    def test_empty_corpus(self, trained):
        classifier, sentences, images = trained
        with pytest.raises(EmptyCorpusError):
            distill_corpus([], 0.5, classifier, sentences, images)


def one_dim_stores(sentence_values, image_values):
    sentence_values = np.asarray(sentence_values, dtype=float)[:, None]
    image_values = np.asarray(image_values, dtype=float)[:, None]
    sentences = EmbeddingStore([f"s{i}" for i in range(len(sentence_values))], sentence_values, EmbeddingKind.SENTENCE)
    images = EmbeddingStore([f"i{j}" for j in range(len(image_values))], image_values, EmbeddingKind.IMAGE)
    return sentences, images


class TestClassifierMetrics:
    """Tests for the logistic link and the held-out metrics."""

    def test_logit_of_ln_three_scores_three_quarters(self):
        classifier = AlignmentClassifier(weights=np.array([1.0, 0.0]), bias=math.log(3.0) - 0.5)
        assert score(classifier, np.array([0.5]), np.array([2.0])) == pytest.approx(0.75, abs=1e-12)

    def test_score_strictly_increases_with_the_logit(self):
        classifier = AlignmentClassifier(weights=np.array([1.0, 0.0]), bias=0.0)
        values = np.linspace(-30.0, 30.0, 601)
        scores = classifier.score_matrix(values[:, None], np.zeros((1, 1)))[:, 0]
        assert np.all(np.diff(scores) > 0.0)
        assert np.all((scores > 0.0) & (scores < 1.0))

    def test_auc_unchanged_when_logits_are_scaled(self):
        sentences, images = one_dim_stores([1.0, 3.0, 2.9, 3.2], [0.0])
        pairs = [AlignedPair(sentence_id=f"s{i}", image_id="i0", label=label) for i, label in enumerate([0, 1, 0, 1])]
        aucs = []
        for scale in (1.0, 10.0, 100.0):
            classifier = AlignmentClassifier(weights=np.array([scale, 0.0]), bias=0.0)
            aucs.append(eval_classifier(classifier, pairs, sentences, images).auc)
        assert aucs == [1.0, 1.0, 1.0]

    def test_auc_unchanged_when_weights_and_bias_are_scaled(self, separable, rng):
        pairs, sentences, images = separable
        weights, bias = rng.standard_normal(2 * DIM), 0.3
        base = eval_classifier(AlignmentClassifier(weights=weights, bias=bias), pairs, sentences, images)
        scaled_classifier = AlignmentClassifier(weights=10.0 * weights, bias=10.0 * bias)
        scaled = eval_classifier(scaled_classifier, pairs, sentences, images)
        assert scaled.auc == pytest.approx(base.auc, abs=1e-12)

    def test_random_scores_give_chance_auc(self, rng):
        n = 1000
        sentences, images = one_dim_stores(rng.standard_normal(n), rng.standard_normal(n))
        labels = rng.integers(0, 2, size=n)
        pairs = [AlignedPair(sentence_id=f"s{i}", image_id=f"i{i}", label=int(labels[i])) for i in range(n)]
        classifier = AlignmentClassifier(weights=np.array([1.0, 0.5]), bias=0.0)
        report = eval_classifier(classifier, pairs, sentences, images)
        assert report.auc == pytest.approx(0.5, abs=0.1)
        assert report.size == n

    def test_all_positive_predictions_on_balanced_labels(self, separable):
        pairs, sentences, images = separable
        assert 2 * sum(p.label for p in pairs) == len(pairs)
        classifier = AlignmentClassifier(weights=np.zeros(2 * DIM), bias=5.0)
        report = eval_classifier(classifier, pairs, sentences, images)
        assert report.f1 == pytest.approx(2.0 / 3.0)
        assert report.auc == pytest.approx(0.5)

    def test_weighted_bce_gradients(self, rng):
        for _ in range(50):
            features = torch.from_numpy(rng.standard_normal((12, 2 * DIM)))
            labels = torch.from_numpy((rng.random(12) < 0.3).astype(np.float64))
            labels[0], labels[1] = 1.0, 0.0
            sample_weights = class_weights(labels)
            weights = torch.from_numpy(rng.standard_normal(2 * DIM)).requires_grad_(True)
            bias = torch.tensor([rng.normal()], dtype=torch.float64, requires_grad=True)
            assert torch.autograd.gradcheck(
                lambda w, b: weighted_bce(features, labels, w, b, sample_weights),
                (weights, bias),
                eps=1e-4,
                rtol=1e-3,
            )

    def test_class_weights_balance_the_classes(self):
        labels = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)
        sample_weights = class_weights(labels)
        assert float(sample_weights.mean()) == pytest.approx(1.0)
        assert float(sample_weights[labels > 0.5].sum()) == pytest.approx(float(sample_weights[labels < 0.5].sum()))


class TestRandomCorpora:
    """Threshold monotonicity over many random corpora."""

    def test_raising_the_threshold_never_adds_a_pair(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            n_sentences, n_images = 30, 12
            sentences = EmbeddingStore(
                [f"s{i}" for i in range(n_sentences)], rng.standard_normal((n_sentences, DIM)), EmbeddingKind.SENTENCE
            )
            images = EmbeddingStore(
                [f"i{j}" for j in range(n_images)], rng.standard_normal((n_images, DIM)), EmbeddingKind.IMAGE
            )
            classifier = AlignmentClassifier(weights=rng.standard_normal(2 * DIM), bias=float(rng.normal()))
            reviews = [
                make_review(
                    f"r{k}",
                    f"u{k % 3}",
                    [f"s{i}" for i in rng.choice(n_sentences, size=4, replace=False)],
                    [f"i{j}" for j in rng.choice(n_images, size=3, replace=False)],
                )
                for k in range(8)
            ]
            thresholds = np.sort(rng.random(4))
            kept = []
            for threshold in thresholds:
                pairs, records = distill_corpus(reviews, float(threshold), classifier, sentences, images)
                kept_pairs = {(p.review_id, p.sentence_idx, p.image_id) for p in pairs}
                kept.append((kept_pairs, {r.review_id for r in records}))
            for (looser_pairs, looser_records), (stricter_pairs, stricter_records) in zip(kept, kept[1:]):
                assert stricter_pairs <= looser_pairs
                assert stricter_records <= looser_records


class TestUserHistories:
    """Tests for review histories."""

    def test_histories_stay_inside_the_split(self):
        reviews = [
            make_review("r0", "u0", ["s0"], ["i0"]),
            make_review("r1", "u0", ["s1"], ["i0"]),
            make_review("r2", "u0", ["s2"], ["i0"], split=DataSplit.TEST),
            make_review("r3", "u0", ["s3"], ["i0"], split=DataSplit.TEST),
            make_review("r4", "u1", ["s4"], ["i0"]),
        ]
        histories = user_histories(reviews, None)
        assert histories == {"r0": ["r1"], "r1": ["r0"], "r2": ["r3"], "r3": ["r2"], "r4": []}

    def test_history_needs_a_review_vector(self):
        reviews = [make_review(f"r{k}", "u0", [f"s{k}"], ["i0"]) for k in range(3)]
        store = EmbeddingStore(["r0", "r2"], np.ones((2, DIM)), EmbeddingKind.REVIEW_TEXT)
        histories = user_histories(reviews, store, max_history=5)
        assert histories == {"r0": ["r2"], "r1": ["r0", "r2"], "r2": ["r0"]}

    def test_history_is_capped(self):
        reviews = [make_review(f"r{k}", "u0", [f"s{k}"], ["i0"]) for k in range(6)]
        assert user_histories(reviews, None, max_history=2)["r5"] == ["r0", "r1"]
