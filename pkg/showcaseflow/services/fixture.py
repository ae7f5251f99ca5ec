"""
Seeded synthetic dataset generator.

Builds a small world of topics, businesses and users with planted
structure: images of a topic cluster around the topic's direction, users
prefer two topics and photograph images of those topics, descriptive
sentences sit on the topic direction shifted by a shared "visual" offset
while filler sentences sit on the opposite side of that offset. Every
pipeline stage can run on the result.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from showcaseflow.models.enums import DataSplit, EmbeddingKind, KeywordClass
from showcaseflow.models.records import AlignedPair, Interaction, RawReview, ReviewSentence
from showcaseflow.services.embedding_store import EmbeddingStore, save_store
from showcaseflow.storage.repositories import AlignedPairRepository, InteractionRepository, ReviewRepository
from showcaseflow.utils.text_utils import tokenize

logger = logging.getLogger(__name__)

# (topic, entities, adjectives)
TOPICS: List[Tuple[str, List[str], List[str]]] = [
    ("pizza", ["margherita pizza", "pepperoni slice", "garlic knots"], ["crispy", "cheesy", "charred"]),
    ("sushi", ["salmon roll", "tuna nigiri", "miso soup"], ["fresh", "delicate", "silky"]),
    ("dessert", ["chocolate cake", "tiramisu", "pistachio gelato"], ["sweet", "rich", "creamy"]),
    ("coffee", ["latte", "espresso", "cold brew"], ["strong", "smooth", "bitter"]),
    ("interior", ["patio", "dining room", "bar counter"], ["cozy", "bright", "spacious"]),
    ("burger", ["cheeseburger", "onion rings", "milkshake"], ["juicy", "greasy", "thick"]),
    ("noodles", ["ramen bowl", "pad thai", "dumplings"], ["spicy", "savory", "chewy"]),
    ("salad", ["caesar salad", "avocado toast", "grain bowl"], ["crunchy", "light", "zesty"]),
]

ADVERBS = ["really", "very", "surprisingly", "incredibly"]

DESCRIPTIVE_TEMPLATES = [
    "the {entity} was {adverb} {adjective} .",
    "i loved the {adjective} {entity} .",
    "their {entity} is {adverb} {adjective} !",
]

FILLER_SENTENCES = [
    "we came here on a friday night .",
    "parking was easy to find .",
    "the staff greeted us at the door .",
    "we will be back next week .",
    "it took a while to get a table .",
]


class FixtureConfig(BaseModel):
    """Size and noise settings of the synthetic world."""
    seed: int = 42
    dim: int = Field(16, ge=4, description="Width of every embedding store")
    topics: int = Field(6, ge=2, le=len(TOPICS))
    users: int = Field(100, ge=2)
    businesses: int = Field(25, ge=2)
    reviews_per_user: int = Field(5, ge=2)
    pool_size: int = Field(12, ge=2, description="Images per business")
    max_ground_truth: int = Field(3, ge=1)
    image_noise: float = Field(0.35, ge=0.0)
    sentence_noise: float = Field(0.25, ge=0.0)
    annotated_fraction: float = Field(0.3, gt=0.0, le=1.0)
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def validate_sizes(self) -> "FixtureConfig":
        if self.reviews_per_user > self.businesses:
            raise ValueError("a user cannot review more businesses than exist")
        return self


@dataclass
class FixtureWorld:
    """Everything the generator fabricates, before it is written out."""
    images: EmbeddingStore
    review_texts: EmbeddingStore
    sentences: EmbeddingStore
    lexicon: EmbeddingStore
    reviews: List[RawReview]
    pairs: List[AlignedPair]
    interactions: List[Interaction]
    user_topics: Dict[str, List[int]] = field(default_factory=dict)


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    rows = rng.standard_normal((n, dim))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _noise(rng: np.random.Generator, scale: float, dim: int) -> np.ndarray:
    return scale * rng.standard_normal(dim) / np.sqrt(dim)


class FixtureGenerator:
    """
    Fabricates a FixtureWorld from a FixtureConfig.

    All randomness flows through one seeded generator in a fixed order, so
    equal configs produce byte-identical files.
    """

    def __init__(self, config: FixtureConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)

        directions = _unit_rows(self.rng, config.topics + 1, config.dim)
        self.topic_vectors = directions[:-1]
        # Shared offset separating descriptive sentences from filler.
        self.visual_offset = directions[-1]

    def _sentence(self, topic: int) -> Tuple[str, str, Dict[str, List[str]]]:
        _, entities, adjectives = TOPICS[topic]
        entity = entities[int(self.rng.integers(len(entities)))]
        adjective = adjectives[int(self.rng.integers(len(adjectives)))]
        adverb = ADVERBS[int(self.rng.integers(len(ADVERBS)))]
        template = DESCRIPTIVE_TEMPLATES[int(self.rng.integers(len(DESCRIPTIVE_TEMPLATES)))]
        text = template.format(entity=entity, adjective=adjective, adverb=adverb)
        keywords = {KeywordClass.NOUN.value: tokenize(entity), KeywordClass.ADJ.value: [adjective]}
        if "{adverb}" in template:
            keywords[KeywordClass.ADV.value] = [adverb]
        return text, entity, keywords

    def _pools(self) -> Tuple[Dict[str, List[str]], Dict[str, int], Dict[str, np.ndarray]]:
        pools: Dict[str, List[str]] = {}
        topic_of: Dict[str, int] = {}
        vectors: Dict[str, np.ndarray] = {}
        for b in range(self.config.businesses):
            business_id = f"b{b:03d}"
            pool = []
            for j in range(self.config.pool_size):
                image_id = f"{business_id}_img{j:02d}"
                topic = int(self.rng.integers(self.config.topics))
                topic_of[image_id] = topic
                vectors[image_id] = self.topic_vectors[topic] + _noise(self.rng, self.config.image_noise, self.config.dim)
                pool.append(image_id)
            pools[business_id] = pool
        return pools, topic_of, vectors

    def build(self) -> FixtureWorld:
        cfg = self.config
        pools, topic_of, image_vectors = self._pools()
        business_ids = sorted(pools)

        reviews: List[RawReview] = []
        interactions: List[Interaction] = []
        sentence_vectors: Dict[str, np.ndarray] = {}
        review_vectors: Dict[str, np.ndarray] = {}
        user_topics: Dict[str, List[int]] = {}

        n_test = int(round(cfg.test_fraction * cfg.users))
        test_users = set(self.rng.choice(cfg.users, size=n_test, replace=False).tolist()) if n_test else set()

        for u in range(cfg.users):
            user_id = f"u{u:03d}"
            preferred = sorted(self.rng.choice(cfg.topics, size=2, replace=False).tolist())
            user_topics[user_id] = preferred
            split = DataSplit.TEST if u in test_users else DataSplit.TRAIN

            eligible = [b for b in business_ids if any(topic_of[i] in preferred for i in pools[b])]
            if len(eligible) < cfg.reviews_per_user:
                eligible = business_ids
            visited = self.rng.choice(len(eligible), size=cfg.reviews_per_user, replace=False)

            for r, b_index in enumerate(sorted(int(i) for i in visited)):
                business_id = eligible[b_index]
                review_id = f"{user_id}_r{r}"
                pool = pools[business_id]
                matching = [i for i in pool if topic_of[i] in preferred]
                if not matching:
                    matching = [pool[int(self.rng.integers(len(pool)))]]
                take = min(len(matching), int(self.rng.integers(1, cfg.max_ground_truth + 1)))
                chosen = set(self.rng.choice(len(matching), size=take, replace=False).tolist())
                ground_truth = [image_id for j, image_id in enumerate(matching) if j in chosen]

                sentences: List[ReviewSentence] = []
                filler_at = int(self.rng.integers(len(ground_truth) + 1))
                for image_id in ground_truth:
                    if len(sentences) == filler_at:
                        sentences.append(self._filler(review_id, len(sentences), sentence_vectors))
                    topic = topic_of[image_id]
                    text, entity, keywords = self._sentence(topic)
                    sentence_id = f"{review_id}:s{len(sentences)}"
                    sentence_vectors[sentence_id] = (
                        self.topic_vectors[topic] + self.visual_offset
                        + _noise(self.rng, cfg.sentence_noise, cfg.dim)
                    )
                    sentences.append(ReviewSentence(sentence_id=sentence_id, text=text, entities=[entity], keywords=keywords))
                if len(sentences) == filler_at:
                    sentences.append(self._filler(review_id, len(sentences), sentence_vectors))

                review_vectors[review_id] = (
                    self.topic_vectors[[topic_of[i] for i in ground_truth]].mean(axis=0)
                    + _noise(self.rng, cfg.sentence_noise, cfg.dim)
                )
                reviews.append(RawReview(
                    review_id=review_id,
                    user_id=user_id,
                    business_id=business_id,
                    split=split,
                    sentences=sentences,
                    image_ids=ground_truth,
                ))
                interactions.append(Interaction(
                    review_id=review_id,
                    user_id=user_id,
                    business_id=business_id,
                    split=split,
                    candidates=list(pool),
                    ground_truth=ground_truth,
                ))

        self._attach_histories(reviews, interactions)
        pairs = self._annotate(reviews)

        lexicon = self._lexicon(reviews)
        images = _store(image_vectors, EmbeddingKind.IMAGE)
        logger.info(
            f"Fabricated {len(reviews)} reviews, {len(images)} images and {len(pairs)} annotated pairs "
            f"for {cfg.users} users at {cfg.businesses} businesses"
        )
        return FixtureWorld(
            images=images,
            review_texts=_store(review_vectors, EmbeddingKind.REVIEW_TEXT),
            sentences=_store(sentence_vectors, EmbeddingKind.SENTENCE),
            lexicon=lexicon,
            reviews=reviews,
            pairs=pairs,
            interactions=interactions,
            user_topics=user_topics,
        )

    def _filler(self, review_id: str, index: int, sentence_vectors: Dict[str, np.ndarray]) -> ReviewSentence:
        sentence_id = f"{review_id}:s{index}"
        sentence_vectors[sentence_id] = -self.visual_offset + _noise(self.rng, self.config.sentence_noise, self.config.dim)
        text = FILLER_SENTENCES[int(self.rng.integers(len(FILLER_SENTENCES)))]
        return ReviewSentence(sentence_id=sentence_id, text=text)

    def _attach_histories(self, reviews: Sequence[RawReview], interactions: Sequence[Interaction]) -> None:
        """History of a visit: the same user's other reviews and their images, up to 10 each."""
        by_user: Dict[str, List[RawReview]] = {}
        for review in reviews:
            by_user.setdefault(review.user_id, []).append(review)
        for interaction in interactions:
            others = [r for r in by_user[interaction.user_id] if r.review_id != interaction.review_id]
            interaction.history_reviews = [r.review_id for r in others][:10]
            interaction.history_images = [i for r in others for i in r.image_ids][:10]

    def _annotate(self, reviews: Sequence[RawReview]) -> List[AlignedPair]:
        """Label every sentence-image combination of a sample of training reviews."""
        train = [r for r in reviews if r.split == DataSplit.TRAIN]
        take = max(1, int(round(self.config.annotated_fraction * len(train))))
        sampled = sorted(self.rng.choice(len(train), size=take, replace=False).tolist())
        pairs = []
        for index in sampled:
            review = train[index]
            for sentence in review.sentences:
                label = 1 if sentence.entities else 0
                pairs.extend(AlignedPair(sentence_id=sentence.sentence_id, image_id=i, label=label) for i in review.image_ids)
        return pairs

    def _lexicon(self, reviews: Sequence[RawReview]) -> EmbeddingStore:
        """
        Per-token vectors: topic words sit on their topic plus the visual
        offset, every other token gets a short random vector.
        """
        topic_of_token: Dict[str, int] = {}
        for topic, (_, entities, adjectives) in enumerate(TOPICS[: self.config.topics]):
            for phrase in entities + adjectives:
                for token in tokenize(phrase):
                    topic_of_token.setdefault(token, topic)

        tokens = sorted({t for review in reviews for s in review.sentences for t in tokenize(s.text)})
        vectors: Dict[str, np.ndarray] = {}
        for token in tokens:
            noise = _noise(self.rng, self.config.sentence_noise, self.config.dim)
            if token in topic_of_token:
                vectors[token] = self.topic_vectors[topic_of_token[token]] + self.visual_offset + noise
            else:
                vectors[token] = 0.2 * noise / max(self.config.sentence_noise, 1e-6)
        return _store(vectors, EmbeddingKind.SENTENCE)


def _store(vectors: Dict[str, np.ndarray], kind: EmbeddingKind) -> EmbeddingStore:
    ids = list(vectors)
    data = np.stack([vectors[i] for i in ids]).astype(np.float32)
    return EmbeddingStore(ids, data, kind)


CONFIG_TEMPLATE = """\
# Synthetic fixture configuration (seed {seed})

[paths]
image_store = "images.json"
review_store = "reviews.json"
sentence_store = "sentences.json"
lexicon_store = "lexicon.json"
reviews = "reviews.jsonl"
annotated_pairs = "annotated_pairs.jsonl"
interactions = "interactions.jsonl"
out_dir = "out"

[model]
hidden = 64
heads = 4
enc_layers = 2
dec_layers = 2
proj_dim = 32

[dpp]
k = 3
user_hidden = [32, 16]
image_hidden = [32, 16]
lr = 0.01
batch_size = 64
epochs = 40
random_trials = 1000

[generation]
beam_size = 2
max_len = 64

[training]
seed = {seed}
lr = 0.001
batch_size = 32
epochs = 3
loss_mode = "ce+ccl+pcl"

[distill]
threshold = 0.5
epochs = 300
"""


def write_fixture(world: FixtureWorld, directory: Path, seed: int) -> Dict[str, Path]:
    """
    Write a fabricated world and a matching config.toml into `directory`.

    Returns:
        Artifact name -> written path
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {
        "images": save_store(world.images, directory / "images.json"),
        "review_texts": save_store(world.review_texts, directory / "reviews.json"),
        "sentences": save_store(world.sentences, directory / "sentences.json"),
        "lexicon": save_store(world.lexicon, directory / "lexicon.json"),
    }
    ReviewRepository(directory / "reviews.jsonl").write_all(world.reviews)
    AlignedPairRepository(directory / "annotated_pairs.jsonl").write_all(world.pairs)
    InteractionRepository(directory / "interactions.jsonl").write_all(world.interactions)
    written.update({
        "reviews": directory / "reviews.jsonl",
        "annotated_pairs": directory / "annotated_pairs.jsonl",
        "interactions": directory / "interactions.jsonl",
    })

    config_path = directory / "config.toml"
    config_path.write_text(CONFIG_TEMPLATE.format(seed=seed), encoding="utf-8")
    written["config"] = config_path
    logger.info(f"Wrote synthetic fixture to {directory}")
    return written
