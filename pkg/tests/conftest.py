import numpy as np
import pytest
import torch

from showcaseflow.config import ModelConfig
from showcaseflow.models.enums import EmbeddingKind
from showcaseflow.services.embedding_store import EmbeddingStore
from showcaseflow.services.fixture import FixtureConfig, FixtureGenerator, write_fixture
from showcaseflow.services.text_processor import Vocabulary

from tests.helpers import SMALL_FIXTURE


@pytest.fixture(autouse=True)
def _seed_torch():
    """Every test starts from the same torch and numpy global state."""
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def make_store():
    """Factory building an EmbeddingStore from a list of rows."""
    def _make(rows, kind=EmbeddingKind.IMAGE, prefix="x"):
        data = np.asarray(rows, dtype=np.float32)
        ids = [f"{prefix}{i}" for i in range(len(data))]
        return EmbeddingStore(ids, data, kind)
    return _make


@pytest.fixture(scope="session")
def small_world():
    """A small synthetic world shared by read-only tests."""
    return FixtureGenerator(FixtureConfig(seed=7, **SMALL_FIXTURE)).build()


@pytest.fixture
def fixture_dir(tmp_path):
    """A small synthetic dataset written to a fresh directory."""
    world = FixtureGenerator(FixtureConfig(seed=7, **SMALL_FIXTURE)).build()
    write_fixture(world, tmp_path, seed=7)
    return tmp_path


@pytest.fixture
def toy_vocabulary() -> Vocabulary:
    return Vocabulary.build([["the", "cake", "was", "sweet", "."], ["the", "latte", "was", "strong", "."]])


@pytest.fixture
def tiny_model_config(toy_vocabulary) -> ModelConfig:
    """A model small enough to build in milliseconds."""
    return ModelConfig(
        hidden=16, heads=2, enc_layers=1, dec_layers=1, ffn_multiplier=2, proj_dim=8,
        vocab=len(toy_vocabulary), image_dim=4, review_dim=4,
    )
