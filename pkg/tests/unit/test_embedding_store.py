"""
Unit tests for the embedding store: file format, lookups and similarity helpers.
"""

import json

import numpy as np
import pytest

from showcaseflow.core.exceptions import (
    DimensionMismatchError,
    DuplicateIdError,
    MissingFileError,
    NonFiniteValueError,
    ShapeMismatchError,
    UnresolvedReferenceError,
)
from showcaseflow.models.enums import EmbeddingKind
from showcaseflow.models.records import EmbeddingRef
from showcaseflow.services.embedding_store import (
    EmbeddingStore,
    cosine_matrix,
    cosine_sim,
    data_path_for,
    dissimilarity,
    load_store,
    save_store,
)


def write_raw(tmp_path, manifest, values):
    path = tmp_path / "store.json"
    path.write_text(json.dumps(manifest), encoding="utf-8")
    np.asarray(values, dtype="<f4").tofile(data_path_for(path))
    return path


class TestLoadStore:
    """Tests for reading the manifest plus binary format."""

    def test_two_rows(self, tmp_path):
        """A 2-d manifest with two ids and four floats loads as two rows."""
        path = write_raw(tmp_path, {"dim": 2, "count": 2, "kind": "image", "ids": ["a", "b"]}, [1, 0, 0, 1])
        store = load_store(path)
        assert len(store) == 2
        assert store.dim == 2
        np.testing.assert_array_equal(store.vector("b"), [0.0, 1.0])

    def test_row_count_mismatch(self, tmp_path):
        """A manifest declaring three rows over a two-row file is rejected."""
        path = write_raw(tmp_path, {"dim": 2, "count": 3, "kind": "image", "ids": ["a", "b", "c"]}, [1, 0, 0, 1])
        with pytest.raises(DimensionMismatchError, match="row count mismatch"):
            load_store(path)

    def test_missing_data_file(self, tmp_path):
        path = tmp_path / "store.json"
        path.write_text(json.dumps({"dim": 1, "count": 1, "kind": "image", "ids": ["a"]}), encoding="utf-8")
        with pytest.raises(MissingFileError):
            load_store(path)

    def test_duplicate_id(self, tmp_path):
        path = write_raw(tmp_path, {"dim": 1, "count": 2, "kind": "image", "ids": ["a", "a"]}, [1, 2])
        with pytest.raises(DuplicateIdError):
            load_store(path)

    def test_non_finite_value(self, tmp_path):
        path = write_raw(tmp_path, {"dim": 1, "count": 1, "kind": "image", "ids": ["a"]}, [np.nan])
        with pytest.raises(NonFiniteValueError):
            load_store(path)

    def test_kind_mismatch(self, tmp_path):
        path = write_raw(tmp_path, {"dim": 1, "count": 1, "kind": "image", "ids": ["a"]}, [1])
        with pytest.raises(DimensionMismatchError):
            load_store(path, kind=EmbeddingKind.SENTENCE)

    def test_round_trip_is_byte_exact(self, tmp_path, rng):
        """save(load(X)) reproduces X's bytes."""
        values = rng.standard_normal(12).astype("<f4")
        path = write_raw(tmp_path, {"dim": 3, "count": 4, "kind": "sentence", "ids": list("wxyz")}, values)
        original = data_path_for(path).read_bytes()
        copy = save_store(load_store(path), tmp_path / "copy.json")
        assert data_path_for(copy).read_bytes() == original
        assert load_store(copy).digest() == load_store(path).digest()


class TestEmbeddingStore:
    """Tests for in-memory lookups."""

    def test_data_is_read_only(self, make_store):
        store = make_store([[1.0, 2.0]])
        with pytest.raises(ValueError):
            store.data[0, 0] = 5.0

    def test_resolve_checks_kind(self, make_store):
        store = make_store([[1.0, 2.0]], kind=EmbeddingKind.IMAGE)
        np.testing.assert_array_equal(store.resolve(EmbeddingRef(id="x0", kind=EmbeddingKind.IMAGE)), [1.0, 2.0])
        with pytest.raises(UnresolvedReferenceError):
            store.resolve(EmbeddingRef(id="x0", kind=EmbeddingKind.SENTENCE))

    def test_unknown_id(self, make_store):
        with pytest.raises(UnresolvedReferenceError):
            make_store([[1.0]]).vector("missing")

    def test_empty_vectors_keep_width(self, make_store):
        assert make_store([[1.0, 2.0, 3.0]]).vectors([]).shape == (0, 3)

    def test_ragged_rows_rejected(self):
        with pytest.raises(DimensionMismatchError):
            EmbeddingStore(["a", "b"], np.zeros((3, 2)), EmbeddingKind.IMAGE)


class TestSimilarity:
    """Tests for cosine similarity and dis-similarity."""

    def test_identical_directions(self):
        assert cosine_sim([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine_sim([1, 0], [0, 1]) == 0.0

    def test_opposite(self):
        assert cosine_sim([1, 0], [-1, 0]) == -1.0
        assert dissimilarity([1, 0], [-1, 0]) == 2.0

    def test_symmetric_and_scale_invariant(self, rng):
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        assert cosine_sim(a, b) == pytest.approx(cosine_sim(b, a), abs=1e-15)
        assert cosine_sim(3.0 * a, b) == pytest.approx(cosine_sim(a, b), abs=1e-12)

    def test_zero_norm(self):
        with pytest.raises(NonFiniteValueError):
            cosine_sim([0, 0], [1, 0])

    def test_dim_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            cosine_sim([1, 0], [1, 0, 0])

    def test_matrix_matches_pairwise(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
        matrix = cosine_matrix(a, b)
        assert matrix.shape == (3, 5)
        for i in range(3):
            for j in range(5):
                assert matrix[i, j] == pytest.approx(cosine_sim(a[i], b[j]), abs=1e-12)
