"""
Precomputed embedding matrices.

A store is a JSON manifest (`dim`, `count`, `kind`, `ids`) next to a blob of
dim x count IEEE-754 binary32 little-endian values in row-major order. The
blob shares the manifest's stem with a `.bin` suffix. Stores are immutable
once loaded, so concurrent readers are safe.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from sklearn.metrics.pairwise import cosine_similarity

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
from showcaseflow.utils.validation import ensure_finite

logger = logging.getLogger(__name__)

STORAGE_DTYPE = np.dtype("<f4")
ZERO_NORM = 0.0


def data_path_for(manifest_path: Union[str, Path]) -> Path:
    """Path of the binary blob that belongs to a manifest."""
    return Path(manifest_path).with_suffix(".bin")


class EmbeddingStore:
    """
    Id-indexed matrix of feature vectors.

    Vectors are stored unnormalized; similarity helpers normalize on use.
    """

    def __init__(self, ids: Sequence[str], data: np.ndarray, kind: EmbeddingKind):
        data = np.ascontiguousarray(np.asarray(data, dtype=STORAGE_DTYPE))
        if data.ndim != 2:
            raise DimensionMismatchError(f"embedding data must be 2-D, got shape {data.shape}")
        if data.shape[0] != len(ids):
            raise DimensionMismatchError(
                f"row count mismatch: {len(ids)} ids but {data.shape[0]} rows"
            )
        if data.shape[1] < 1:
            raise DimensionMismatchError("dim must be a positive integer")
        ensure_finite(data, "embedding data")

        self._index: Dict[str, int] = {}
        for row, item_id in enumerate(ids):
            if item_id in self._index:
                raise DuplicateIdError(f"duplicate id: {item_id}")
            self._index[item_id] = row

        data.flags.writeable = False
        self._data = data
        self._ids = tuple(ids)
        self.kind = EmbeddingKind(kind)

    @property
    def dim(self) -> int:
        return int(self._data.shape[1])

    @property
    def ids(self) -> List[str]:
        return list(self._ids)

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the stored matrix."""
        return self._data

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._index

    def row(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise UnresolvedReferenceError(f"unknown {self.kind.value} id: {item_id}") from None

    def vector(self, item_id: str) -> np.ndarray:
        """The stored vector for `item_id`."""
        return self._data[self.row(item_id)]

    def vectors(self, item_ids: Iterable[str]) -> np.ndarray:
        """Stack the vectors for `item_ids` into a (n, dim) matrix."""
        rows = [self.row(item_id) for item_id in item_ids]
        if not rows:
            return np.zeros((0, self.dim), dtype=STORAGE_DTYPE)
        return self._data[rows]

    def resolve(self, ref: EmbeddingRef) -> np.ndarray:
        """Vector for an EmbeddingRef; the ref's kind must match the store's."""
        if ref.kind != self.kind:
            raise UnresolvedReferenceError(
                f"{ref.kind.value} reference {ref.id} cannot resolve in a {self.kind.value} store"
            )
        return self.vector(ref.id)

    def resolve_all(self, refs: Iterable[EmbeddingRef]) -> np.ndarray:
        refs = list(refs)
        if not refs:
            return np.zeros((0, self.dim), dtype=STORAGE_DTYPE)
        return np.stack([self.resolve(ref) for ref in refs])

    def digest(self) -> str:
        """SHA-256 of the raw data bytes."""
        return hashlib.sha256(self._data.tobytes()).hexdigest()

    def manifest(self) -> Dict[str, object]:
        return {"dim": self.dim, "count": len(self), "kind": self.kind.value, "ids": list(self._ids)}

    def __repr__(self) -> str:
        return f"EmbeddingStore(kind={self.kind.value}, dim={self.dim}, count={len(self)})"


def load_store(manifest_path: Union[str, Path], kind: Optional[EmbeddingKind] = None) -> EmbeddingStore:
    """
    Load an embedding store from its manifest.

    Args:
        manifest_path: Path to the JSON manifest
        kind: Optional expected kind; a mismatch is an error

    Returns:
        The loaded, immutable store

    Raises:
        MissingFileError: If manifest or data file is missing
        DimensionMismatchError: If manifest and data disagree on dim/count
        DuplicateIdError: If an id appears twice
        NonFiniteValueError: If the data holds NaN or infinity
    """
    manifest_path = Path(manifest_path)
    blob_path = data_path_for(manifest_path)
    if not manifest_path.is_file():
        raise MissingFileError(manifest_path, "embedding manifest")
    if not blob_path.is_file():
        raise MissingFileError(blob_path, "embedding data")

    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)

    dim = int(manifest["dim"])
    ids = list(manifest["ids"])
    count = int(manifest.get("count", len(ids)))
    store_kind = EmbeddingKind(manifest["kind"])
    if kind is not None and EmbeddingKind(kind) != store_kind:
        raise DimensionMismatchError(
            f"{manifest_path} holds {store_kind.value} vectors, expected {EmbeddingKind(kind).value}"
        )
    if count != len(ids):
        raise DimensionMismatchError(f"row count mismatch: count={count} but {len(ids)} ids")

    raw = np.fromfile(blob_path, dtype=STORAGE_DTYPE)
    if raw.size != dim * count:
        raise DimensionMismatchError(
            f"row count mismatch: manifest declares {count}x{dim} values, data file has {raw.size}"
        )

    store = EmbeddingStore(ids, raw.reshape(count, dim), store_kind)
    logger.info(f"Loaded {store!r} from {manifest_path}")
    return store


def save_store(store: EmbeddingStore, manifest_path: Union[str, Path]) -> Path:
    """
    Write a store as manifest plus binary blob.

    Returns:
        Path of the written manifest
    """
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(store.manifest(), f, indent=2)
        f.write("\n")
    with open(data_path_for(manifest_path), "wb") as f:
        f.write(store.data.astype(STORAGE_DTYPE, copy=False).tobytes())
    logger.debug(f"Saved {store!r} to {manifest_path}")
    return manifest_path


def _as_vector(a: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    vector = np.asarray(a, dtype=np.float64)
    if vector.ndim != 1:
        raise ShapeMismatchError(f"expected a vector, got shape {vector.shape}")
    return vector


def cosine_sim(a: Union[Sequence[float], np.ndarray], b: Union[Sequence[float], np.ndarray]) -> float:
    """
    Cosine similarity of two nonzero vectors of equal dimension.

    Raises:
        ShapeMismatchError: If dims differ
        NonFiniteValueError: If either vector has zero norm
    """
    a, b = _as_vector(a), _as_vector(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"dim mismatch: {a.shape[0]} vs {b.shape[0]}")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == ZERO_NORM or norm_b == ZERO_NORM:
        raise NonFiniteValueError("cosine similarity of a zero-norm vector is undefined")
    value = float(np.dot(a / norm_a, b / norm_b))
    return min(1.0, max(-1.0, value))


def dissimilarity(a: Union[Sequence[float], np.ndarray], b: Union[Sequence[float], np.ndarray]) -> float:
    """Cosine dis-similarity 1 - sim(a, b), in [0, 2]."""
    return 1.0 - cosine_sim(a, b)


def cosine_matrix(a: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Pairwise cosine similarities between the rows of `a` and `b`.

    Raises:
        ShapeMismatchError: If the row widths differ
        NonFiniteValueError: If any row has zero norm
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = a if b is None else np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(f"dim mismatch: {a.shape[1]} vs {b.shape[1]}")
    if np.any(np.linalg.norm(a, axis=1) == ZERO_NORM) or np.any(np.linalg.norm(b, axis=1) == ZERO_NORM):
        raise NonFiniteValueError("cosine similarity of a zero-norm vector is undefined")
    return np.clip(cosine_similarity(a, b), -1.0, 1.0)
