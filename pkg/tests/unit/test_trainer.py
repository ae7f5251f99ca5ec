"""
Unit tests for the explanation generator training loop.
"""

import math

import pytest
import torch

from showcaseflow.config import TrainingConfig
from showcaseflow.core.exceptions import EmptyCorpusError
from showcaseflow.models.enums import EmbeddingKind, LossMode
from showcaseflow.models.records import EntitySpan, ReviewRecord
from showcaseflow.services.mm_model import MultiModalExplainer
from showcaseflow.services.text_processor import EOS_ID, EntityVocabulary
from showcaseflow.services.trainer import ExplainerTrainer


@pytest.fixture
def corpus(make_store, rng, toy_vocabulary):
    images = make_store(rng.standard_normal((8, 4)), prefix="i")
    reviews = make_store(rng.standard_normal((8, 4)), kind=EmbeddingKind.REVIEW_TEXT, prefix="r")
    cake, latte = toy_vocabulary.token_id("cake"), toy_vocabulary.token_id("latte")
    the, was = toy_vocabulary.token_id("the"), toy_vocabulary.token_id("was")
    records = []
    for n in range(8):
        entity, entity_id = ("cake", cake) if n % 2 else ("latte", latte)
        records.append(ReviewRecord(
            review_id=f"r{n}", user_id=f"u{n % 3}", business_id="b0",
            images=[f"i{n}"], history=[f"r{(n + 1) % 8}", f"r{(n + 2) % 8}"],
            target=[the, entity_id, was, EOS_ID],
            entity_spans=[EntitySpan(start=1, end=2, entity=entity)],
        ))
    return records, images, reviews


def make_trainer(corpus, config, vocabulary, mode, **model_updates):
    records, images, reviews = corpus
    torch.manual_seed(0)
    model_config = config.model_copy(update=model_updates)
    model = MultiModalExplainer(model_config)
    training = TrainingConfig(lr=1e-3, batch_size=4, epochs=1, seed=3, loss_mode=mode)
    trainer = ExplainerTrainer(model, images, reviews, vocabulary, model_config, training,
                               EntityVocabulary(["cake", "latte"]))
    return trainer, records


class TestExplainerTrainer:
    """Tests for loss composition and optimisation steps."""

    def test_zero_weights_are_bit_identical_to_cross_entropy(self, corpus, tiny_model_config, toy_vocabulary):
        plain, records = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE)
        mixed, _ = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE_CCL_PCL,
                                lambda1=0.0, lambda2=0.0)
        for _ in range(3):
            a = plain.step(records[:4])
            b = mixed.step(records[:4])
            assert torch.equal(a.total, b.total)
        for name, tensor in plain.model.state_dict().items():
            assert torch.equal(tensor, mixed.model.state_dict()[name])

    def test_contrastive_step_reports_every_term(self, corpus, tiny_model_config, toy_vocabulary):
        trainer, records = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE_CCL_PCL)
        values = trainer.step(records[:4]).as_floats()
        assert values["image_text"] is not None
        assert values["history_text"] is not None
        expected = values["ce"] + 0.2 * values["image_text"] + 0.2 * values["history_text"]
        assert values["total"] == pytest.approx(expected, rel=1e-5)

    def test_entity_negatives_dropped_without_image_term(self, corpus, tiny_model_config, toy_vocabulary):
        trainer, _ = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE_CCL, lambda1=0.0)
        assert trainer.entity_vocab is None

    def test_batch_order_independent_of_loss_mode(self, corpus, tiny_model_config, toy_vocabulary):
        a, records = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE)
        b, _ = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE_CCL_PCL)
        assert a._shuffle_rng.permutation(8).tolist() == b._shuffle_rng.permutation(8).tolist()

    def test_train_respects_max_steps(self, corpus, tiny_model_config, toy_vocabulary):
        trainer, records = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE_CL)
        trainer.config = trainer.config.model_copy(update={"epochs": 5, "max_steps": 3})
        history = trainer.train(records)
        assert len(history) == 3
        assert all(math.isfinite(step["total"]) for step in history)

    def test_loss_goes_down(self, corpus, tiny_model_config, toy_vocabulary):
        trainer, records = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE)
        trainer.config = trainer.config.model_copy(update={"epochs": 30, "batch_size": 8})
        history = trainer.train(records)
        assert history[-1]["ce"] < history[0]["ce"]

    def test_empty_corpus(self, corpus, tiny_model_config, toy_vocabulary):
        trainer, _ = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE)
        with pytest.raises(EmptyCorpusError):
            trainer.train([])

    def test_total_loss_reaches_every_component(self, corpus, tiny_model_config, toy_vocabulary):
        trainer, records = make_trainer(corpus, tiny_model_config, toy_vocabulary, LossMode.CE_CCL_PCL)
        breakdown = trainer.compute_loss(trainer.make_batch(records[:4]))
        breakdown.total.backward()
        groups = (
            "image_projection", "review_projection", "encoder_layers", "token_embedding", "decoder_layers",
            "output_head", "image_head", "review_head", "text_head",
        )
        for group in groups:
            grads = [p.grad for name, p in trainer.model.named_parameters() if name.startswith(group + ".")]
            assert grads, group
            assert any(g is not None and bool(g.abs().sum() > 0) for g in grads), group
