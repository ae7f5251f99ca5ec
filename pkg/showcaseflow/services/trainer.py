"""
Training loop of the explanation generator.

Each step encodes a batch, decodes it under teacher forcing, adds the
contrastive terms of the configured loss mode and takes one AdamW step.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from showcaseflow.config import ModelConfig, TrainingConfig
from showcaseflow.core.exceptions import EmptyCorpusError, NonFiniteValueError
from showcaseflow.models.enums import LossMode
from showcaseflow.models.records import ReviewRecord
from showcaseflow.services import diffmath
from showcaseflow.services.embedding_store import EmbeddingStore
from showcaseflow.services.mm_model import Batch, MultiModalExplainer, ce_loss, collate
from showcaseflow.services.pc2l import LossBreakdown, contrastive_terms, project, total_loss
from showcaseflow.services.text_processor import PAD_ID, EntityVocabulary, Vocabulary

logger = logging.getLogger(__name__)


class ExplainerTrainer:
    """
    Trains a MultiModalExplainer on tokenized review records.

    Shuffling and entity sampling use separate generators derived from
    the seed, so switching loss modes never changes the batch order.
    """

    def __init__(
        self,
        model: MultiModalExplainer,
        image_store: EmbeddingStore,
        review_store: Optional[EmbeddingStore],
        vocabulary: Vocabulary,
        model_config: ModelConfig,
        training_config: TrainingConfig,
        entity_vocab: Optional[EntityVocabulary] = None,
    ):
        self.model = model
        self.image_store = image_store
        self.review_store = review_store
        self.vocabulary = vocabulary
        self.model_config = model_config
        self.config = training_config
        self.mode = LossMode(training_config.loss_mode)

        self.entity_vocab = entity_vocab
        if self.mode.uses_entity_negatives and self.model_config.lambda1 > 0:
            if entity_vocab is None or len(entity_vocab) < 2:
                logger.warning("Fewer than 2 entities available; the image-text term runs without entity negatives")
                self.entity_vocab = None
        else:
            self.entity_vocab = None

        if self.mode.contrastive and self.model_config.lambda2 > 0 and not model_config.use_reviews:
            logger.warning("History-text term needs encoded reviews; it is skipped in image-only mode")

        self._shuffle_rng = np.random.default_rng([training_config.seed, 0])
        self._entity_rng = np.random.default_rng([training_config.seed, 1])
        self.parameters: Dict[str, torch.nn.Parameter] = dict(model.named_parameters())
        self.optimizer = diffmath.make_adamw(
            self.parameters.values(),
            lr=training_config.lr,
            weight_decay=training_config.weight_decay,
            betas=training_config.betas,
            eps=training_config.eps,
        )
        self.step_count = 0

    def make_batch(self, records: Sequence[ReviewRecord]) -> Batch:
        return collate(
            records,
            self.image_store,
            self.review_store if self.model_config.use_reviews else None,
            self.model_config,
            vocabulary=self.vocabulary,
            entity_vocab=self.entity_vocab,
            rng=self._entity_rng if self.entity_vocab is not None else None,
        )

    def compute_loss(self, batch: Batch) -> LossBreakdown:
        """Loss breakdown of one batch under the configured loss mode."""
        enc = self.model.encode_batch(batch)
        hidden = self.model.decode_hidden(enc, batch.inputs)
        ce = ce_loss(self.model.output_head(hidden), batch.labels)

        lambda1, lambda2 = self.model_config.lambda1, self.model_config.lambda2
        if not self.mode.contrastive or (lambda1 == 0 and lambda2 == 0):
            return total_loss(ce, None, None, lambda1, lambda2)

        H_ent = entity_mask = None
        if batch.entity_inputs is not None:
            H_ent = self.model.decode_hidden(enc, batch.entity_inputs)
            entity_mask = batch.entity_labels != PAD_ID
        proj = project(
            self.model,
            enc.H_V, enc.image_mask,
            enc.H_R, enc.review_mask,
            hidden, batch.labels != PAD_ID,
            history_means=batch.history_means,
            H_ent=H_ent, entity_mask=entity_mask, entity_present=batch.entity_present,
        )
        image_term, history_term = contrastive_terms(
            self.mode, proj, self.model_config.temperature, self.model_config.alpha
        )
        return total_loss(
            ce,
            image_term if lambda1 > 0 else None,
            history_term if lambda2 > 0 else None,
            lambda1,
            lambda2,
        )

    def step(self, records: Sequence[ReviewRecord]) -> LossBreakdown:
        """One optimization step on `records`."""
        self.model.train()
        breakdown = self.compute_loss(self.make_batch(records))
        if not torch.isfinite(breakdown.total):
            raise NonFiniteValueError(
                f"non-finite loss at step {self.step_count}: {breakdown.as_floats()}"
            )
        grads = diffmath.backward(breakdown.total, self.parameters)
        diffmath.adamw_step(self.optimizer, self.parameters, grads)
        self.step_count += 1
        return breakdown

    def train(self, records: Sequence[ReviewRecord]) -> List[Dict[str, Optional[float]]]:
        """
        Run the configured number of epochs (or `max_steps` steps).

        Returns:
            Per-step loss breakdowns as floats
        """
        if not records:
            raise EmptyCorpusError("no training records")
        history: List[Dict[str, Optional[float]]] = []
        max_steps = self.config.max_steps
        for epoch in range(self.config.epochs):
            order = self._shuffle_rng.permutation(len(records))
            for start in range(0, len(order), self.config.batch_size):
                if max_steps is not None and self.step_count >= max_steps:
                    return history
                batch_records = [records[int(i)] for i in order[start:start + self.config.batch_size]]
                values = self.step(batch_records).as_floats()
                history.append(values)
                if self.step_count % self.config.log_every == 0:
                    logger.info(f"Epoch {epoch} step {self.step_count}: {values}")
                else:
                    logger.debug(f"Epoch {epoch} step {self.step_count}: {values}")
        return history
