"""
Unit tests for the multimodal explanation generator.
"""

import math

import numpy as np
import pytest
import torch

from showcaseflow.core.exceptions import EmptyAxisError, EmptyCorpusError, VocabularyMismatchError
from showcaseflow.models.enums import EmbeddingKind
from showcaseflow.models.records import EntitySpan, ReviewRecord
from showcaseflow.services.mm_model import (
    MultiModalExplainer,
    build_model,
    ce_loss,
    collate,
    encode_ids,
    generate,
    greedy_decode,
    shift_right,
)
from showcaseflow.services.text_processor import BOS_ID, EOS_ID, PAD_ID, EntityVocabulary


@pytest.fixture
def stores(make_store, rng):
    images = make_store(rng.standard_normal((6, 4)), prefix="i")
    reviews = make_store(rng.standard_normal((4, 4)), kind=EmbeddingKind.REVIEW_TEXT, prefix="r")
    return images, reviews


def make_record(review_id, target, images=("i0", "i1"), history=("r0",), spans=()):
    return ReviewRecord(
        review_id=review_id,
        user_id="u0",
        business_id="b0",
        images=list(images),
        history=list(history),
        target=list(target),
        entity_spans=list(spans),
    )


class TestCollate:
    """Tests for batch construction."""

    def test_teacher_forcing_inputs(self):
        assert shift_right([5, 6, EOS_ID]) == [BOS_ID, 5, 6]

    def test_padding_and_masks(self, stores, tiny_model_config):
        images, reviews = stores
        batch = collate(
            [make_record("a", [4, 5, EOS_ID]), make_record("b", [6, EOS_ID], images=("i2",), history=())],
            images, reviews, tiny_model_config,
        )
        assert batch.labels.tolist() == [[4, 5, EOS_ID], [6, EOS_ID, PAD_ID]]
        assert batch.inputs.tolist() == [[BOS_ID, 4, 5], [BOS_ID, 6, PAD_ID]]
        assert batch.image_mask.sum(dim=1).tolist() == [2, 1]
        assert batch.review_mask.sum(dim=1).tolist() == [1, 0]
        assert torch.equal(batch.history_means[1], torch.zeros(4, dtype=torch.float64))

    def test_entity_negatives(self, stores, tiny_model_config, toy_vocabulary, rng):
        images, reviews = stores
        cake = toy_vocabulary.token_id("cake")
        records = [
            make_record("a", [cake, 5, EOS_ID], spans=[EntitySpan(start=0, end=1, entity="cake")]),
            make_record("b", [6, EOS_ID]),
        ]
        batch = collate(records, images, reviews, tiny_model_config, toy_vocabulary,
                        EntityVocabulary(["cake", "latte"]), rng)
        assert batch.entity_present.tolist() == [True, False]
        assert batch.entity_labels[0].tolist() == [toy_vocabulary.token_id("latte"), 5, EOS_ID]

    def test_empty_batch(self, stores, tiny_model_config):
        with pytest.raises(EmptyCorpusError):
            collate([], *stores, tiny_model_config)


class TestExplainer:
    """Tests for the encoder-decoder forward pass."""

    def test_encoder_treats_images_as_a_set(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config).eval()
        forward = encode_ids(model, ["i0", "i1", "i2"], ["r0"], images, reviews)
        backward = encode_ids(model, ["i2", "i1", "i0"], ["r0"], images, reviews)
        torch.testing.assert_close(forward.H_V[0], backward.H_V[0].flip(0), rtol=1e-5, atol=1e-5)

    def test_padding_does_not_leak(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config).eval()
        vectors = torch.from_numpy(images.vectors(["i0", "i1"]))[None]
        mask = torch.tensor([[True, True]])
        padded = torch.cat([vectors, torch.randn(1, 3, 4)], dim=1)
        padded_mask = torch.tensor([[True, True, False, False, False]])
        with torch.no_grad():
            a = model.encode(vectors, mask)
            b = model.encode(padded, padded_mask)
        torch.testing.assert_close(a.H_V[0], b.H_V[0, :2], rtol=1e-5, atol=1e-5)

    def test_decoder_is_causal(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config).eval()
        enc = encode_ids(model, ["i0"], ["r0"], images, reviews)
        with torch.no_grad():
            a = model.decode_logits(enc, torch.tensor([[BOS_ID, 4, 5, 6]]))
            b = model.decode_logits(enc, torch.tensor([[BOS_ID, 4, 7, 8]]))
        torch.testing.assert_close(a[:, :2], b[:, :2])

    def test_cross_attention_weights_are_distributions(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config).eval()
        enc = encode_ids(model, ["i0", "i1"], ["r0", "r1"], images, reviews)
        with torch.no_grad():
            weights = model.cross_attention_weights(enc, torch.tensor([[BOS_ID, 4]]))
        assert len(weights) == tiny_model_config.dec_layers
        torch.testing.assert_close(weights[0].sum(dim=-1), torch.ones(1, 2, 2))

    def test_image_only_encoding(self, stores, tiny_model_config):
        images, _ = stores
        model = MultiModalExplainer(tiny_model_config.model_copy(update={"use_reviews": False}))
        enc = encode_ids(model, ["i0"], ["r0"], images, None)
        assert enc.H_R.shape[1] == 0

    def test_unknown_token_in_prefix(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config)
        enc = encode_ids(model, ["i0"], [], images, reviews)
        with pytest.raises(VocabularyMismatchError):
            model.decode_logits(enc, torch.tensor([[BOS_ID, tiny_model_config.vocab]]))

    def test_build_model_fills_sizes(self, stores, tiny_model_config, toy_vocabulary):
        images, reviews = stores
        model = build_model(tiny_model_config.model_copy(update={"vocab": 0}), toy_vocabulary, images, reviews)
        assert model.config.vocab == len(toy_vocabulary)
        assert model.config.image_dim == images.dim


class TestCrossEntropy:
    """Tests for the sequence cross-entropy."""

    def test_uniform_logits(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config)
        model.zero_output_head()
        target = [4, 5, 6, 7, EOS_ID]
        batch = collate([make_record("a", target)], images, reviews, tiny_model_config)
        logits = model.decode_logits(model.encode_batch(batch), batch.inputs)
        expected = len(target) * math.log(tiny_model_config.vocab)
        assert float(ce_loss(logits, batch.labels)) == pytest.approx(expected, rel=1e-5)

    def test_padding_excluded(self):
        logits = torch.zeros(2, 3, 5)
        labels = torch.tensor([[1, 2, 3], [1, PAD_ID, PAD_ID]])
        assert float(ce_loss(logits, labels)) == pytest.approx((3 + 1) / 2 * math.log(5), rel=1e-6)

    def test_all_padding_rejected(self):
        with pytest.raises(EmptyAxisError):
            ce_loss(torch.zeros(1, 2, 5), torch.full((1, 2), PAD_ID))


class TestGeneration:
    """Tests for beam search and greedy decoding."""

    def test_beam_one_equals_greedy(self, stores, tiny_model_config):
        images, reviews = stores
        for seed in range(100):
            torch.manual_seed(seed)
            model = MultiModalExplainer(tiny_model_config).eval()
            enc = encode_ids(model, ["i0", "i3"], ["r1"], images, reviews)
            assert generate(model, enc, beam_size=1, max_len=12) == greedy_decode(model, enc, max_len=12)

    def test_output_never_holds_control_tokens(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config).eval()
        enc = encode_ids(model, ["i0"], ["r0"], images, reviews)
        tokens = generate(model, enc, beam_size=3, max_len=64)
        assert len(tokens) <= 64
        assert EOS_ID not in tokens
        assert BOS_ID not in tokens

    def test_eos_first_gives_empty_output(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config).eval()
        model.zero_output_head()
        with torch.no_grad():
            model.output_head.bias[EOS_ID] = 10.0
        enc = encode_ids(model, ["i0"], ["r0"], images, reviews)
        assert generate(model, enc, beam_size=2) == []
        assert greedy_decode(model, enc) == []

    def test_generation_is_deterministic(self, stores, tiny_model_config):
        images, reviews = stores
        model = MultiModalExplainer(tiny_model_config).eval()
        enc = encode_ids(model, ["i1"], ["r2"], images, reviews)
        assert generate(model, enc, beam_size=2, max_len=20) == generate(model, enc, beam_size=2, max_len=20)


class FixedDistribution:
    """Decoder stand-in that predicts the same next-token distribution at every step."""

    def __init__(self, probabilities):
        self.logits = torch.log(torch.tensor(probabilities, dtype=torch.float64))

    def decode_logits(self, enc, prefix):
        return self.logits.expand(prefix.shape[0], prefix.shape[1], -1)


class RepeatableEncoding:
    def repeat(self, n):
        return self


def two_token_distribution(eos_log_prob, token_log_prob, token=3, vocab=10):
    """EOS and `token` at the given log-probabilities; every other id shares the remaining mass."""
    probabilities = np.zeros(vocab)
    probabilities[EOS_ID] = math.exp(eos_log_prob)
    probabilities[token] = math.exp(token_log_prob)
    others = [i for i in range(vocab) if i not in (EOS_ID, token)]
    probabilities[others] = (1.0 - probabilities.sum()) / len(others)
    return FixedDistribution(probabilities.tolist())


class TestBeamLengthNormalization:
    """Tests for ranking finished against cut-off hypotheses."""

    def test_cut_off_hypothesis_is_normalized_by_its_own_length(self):
        model = two_token_distribution(-1.0, -1.2)
        # Stopping at once scores -1.0 per token; running to max_len scores -1.2
        assert generate(model, RepeatableEncoding(), beam_size=2, max_len=2) == []

    def test_cut_off_hypothesis_wins_when_it_scores_better(self):
        model = two_token_distribution(-1.2, -1.0)
        assert generate(model, RepeatableEncoding(), beam_size=2, max_len=2) == [3, 3]


class SequenceLoss(torch.nn.Module):
    """Cross-entropy of a whole batch as a module forward."""

    def __init__(self, model):
        super().__init__()
        self.model = model

    def forward(self, batch):
        enc = self.model.encode(batch["images"], batch["image_mask"], batch["reviews"], batch["review_mask"])
        return ce_loss(self.model.decode_logits(enc, batch["inputs"]), batch["labels"])


class TestGradients:
    """Finite-difference checks through a two-layer explainer."""

    GRADCHECK = dict(eps=1e-4, rtol=1e-3, atol=1e-6)

    @pytest.fixture
    def two_layer(self, tiny_model_config):
        config = tiny_model_config.model_copy(update={"enc_layers": 2, "dec_layers": 2})
        torch.manual_seed(0)
        return MultiModalExplainer(config).double()

    def batch(self, seed):
        gen = torch.Generator().manual_seed(seed)
        labels = torch.tensor([[4, 5, 6, EOS_ID], [7, EOS_ID, PAD_ID, PAD_ID]])
        return dict(
            images=torch.randn(2, 3, 4, generator=gen, dtype=torch.float64),
            image_mask=torch.tensor([[True, True, False], [True, False, False]]),
            reviews=torch.randn(2, 2, 4, generator=gen, dtype=torch.float64),
            review_mask=torch.tensor([[True, False], [True, True]]),
            inputs=torch.tensor([shift_right(row) for row in labels.tolist()]),
            labels=labels,
        )

    def test_cross_entropy_wrt_inputs(self, two_layer):
        wrapper = SequenceLoss(two_layer)
        for seed in range(50):
            batch = self.batch(seed)

            def loss(images, reviews):
                return wrapper({**batch, "images": images, "reviews": reviews})

            inputs = (batch["images"].clone().requires_grad_(True), batch["reviews"].clone().requires_grad_(True))
            assert torch.autograd.gradcheck(loss, inputs, **self.GRADCHECK)

    def test_cross_entropy_wrt_parameters(self, two_layer):
        wrapper = SequenceLoss(two_layer)
        named = dict(wrapper.named_parameters())
        names = [
            "model.image_projection.weight",
            next(n for n in sorted(named) if n.startswith("model.encoder_layers.1.")),
            next(n for n in sorted(named) if n.startswith("model.decoder_layers.1.")),
            "model.output_head.bias",
        ]

        params = tuple(named[n].detach().clone().requires_grad_(True) for n in names)
        for seed in range(3):
            batch = self.batch(seed)

            def loss(*overrides):
                return torch.func.functional_call(wrapper, dict(zip(names, overrides)), (batch,))

            assert torch.autograd.gradcheck(loss, params, **self.GRADCHECK)
