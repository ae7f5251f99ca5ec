"""
Checkpoint persistence for every learned component.

A checkpoint reuses the embedding-store layout: a JSON manifest naming each
parameter with its shape and offset, next to a `.bin` blob holding all
parameters as binary32 little-endian values in manifest order. Manifests
carry no timestamps, so seeded reruns produce byte-identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import torch

from showcaseflow.core.exceptions import DimensionMismatchError, VocabularyMismatchError
from showcaseflow.services.embedding_store import STORAGE_DTYPE, data_path_for
from showcaseflow.utils.validation import ensure_finite, require_file

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "showcaseflow-parameters/1"


class CheckpointMetadata:
    """Descriptive metadata stored in a checkpoint manifest."""

    def __init__(
        self,
        kind: str,
        config: Optional[Dict[str, Any]] = None,
        metrics: Optional[Dict[str, float]] = None,
        vocab_size: Optional[int] = None,
        vocab_digest: Optional[str] = None,
        seed: Optional[int] = None,
    ):
        self.kind = kind
        self.config = config or {}
        self.metrics = metrics or {}
        self.vocab_size = vocab_size
        self.vocab_digest = vocab_digest
        self.seed = seed

    def to_dict(self) -> Dict[str, Any]:
        """Convert metadata to dictionary."""
        return {
            "kind": self.kind,
            "config": self.config,
            "metrics": self.metrics,
            "vocab_size": self.vocab_size,
            "vocab_digest": self.vocab_digest,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CheckpointMetadata":
        """Create a CheckpointMetadata object from a dictionary."""
        return cls(
            kind=data["kind"],
            config=data.get("config", {}),
            metrics=data.get("metrics", {}),
            vocab_size=data.get("vocab_size"),
            vocab_digest=data.get("vocab_digest"),
            seed=data.get("seed"),
        )

    def check_vocabulary(self, vocab_size: int, vocab_digest: Optional[str] = None) -> None:
        """
        Raise VocabularyMismatchError if the checkpoint was trained on another vocabulary.
        """
        if self.vocab_size is not None and self.vocab_size != vocab_size:
            raise VocabularyMismatchError(
                f"checkpoint expects a vocabulary of {self.vocab_size} tokens, got {vocab_size}"
            )
        if vocab_digest and self.vocab_digest and vocab_digest != self.vocab_digest:
            raise VocabularyMismatchError("vocabulary file differs from the one the checkpoint was trained with")

    def __repr__(self) -> str:
        return f"CheckpointMetadata(kind={self.kind}, vocab_size={self.vocab_size})"


def _as_array(value: Union[torch.Tensor, np.ndarray]) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.ascontiguousarray(np.asarray(value, dtype=STORAGE_DTYPE))


def save_checkpoint(
    path: Union[str, Path],
    parameters: Mapping[str, Union[torch.Tensor, np.ndarray]],
    metadata: CheckpointMetadata,
) -> Path:
    """
    Write named parameters and metadata.

    Args:
        path: Manifest path; the blob goes next to it with a `.bin` suffix
        parameters: Name -> tensor mapping, typically a state_dict
        metadata: Checkpoint metadata

    Returns:
        Path of the written manifest
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries: List[Dict[str, Any]] = []
    blobs: List[bytes] = []
    offset = 0
    for name, value in parameters.items():
        array = _as_array(value)
        ensure_finite(array, f"parameter {name}")
        entries.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        blobs.append(array.tobytes())
        offset += int(array.size)

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "dtype": STORAGE_DTYPE.str,
        "count": offset,
        "parameters": entries,
        "metadata": metadata.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(data_path_for(path), "wb") as f:
        for blob in blobs:
            f.write(blob)

    logger.info(f"Saved {metadata.kind} checkpoint with {len(entries)} parameters to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, torch.Tensor], CheckpointMetadata]:
    """
    Read a checkpoint written by save_checkpoint.

    Returns:
        Tuple of (name -> float32 tensor, metadata)

    Raises:
        MissingFileError: If manifest or blob is missing
        DimensionMismatchError: If the blob size disagrees with the manifest
    """
    path = require_file(path, "checkpoint")
    blob_path = require_file(data_path_for(path), "checkpoint data")
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)

    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DimensionMismatchError(f"{path} is not a parameter checkpoint")
    raw = np.fromfile(blob_path, dtype=STORAGE_DTYPE)
    if raw.size != int(manifest["count"]):
        raise DimensionMismatchError(
            f"checkpoint {path} declares {manifest['count']} values, data file has {raw.size}"
        )

    parameters: Dict[str, torch.Tensor] = {}
    for entry in manifest["parameters"]:
        start, count = int(entry["offset"]), int(entry["count"])
        array = raw[start:start + count].reshape(entry["shape"]).copy()
        parameters[entry["name"]] = torch.from_numpy(array)

    metadata = CheckpointMetadata.from_dict(manifest["metadata"])
    logger.info(f"Loaded {metadata!r} from {path}")
    return parameters, metadata


def load_into(module: torch.nn.Module, path: Union[str, Path]) -> CheckpointMetadata:
    """
    Load checkpoint parameters into `module`, which must have matching names and shapes.
    """
    parameters, metadata = load_checkpoint(path)
    expected = module.state_dict()
    missing = sorted(set(expected) - set(parameters))
    unexpected = sorted(set(parameters) - set(expected))
    if missing or unexpected:
        raise DimensionMismatchError(
            f"checkpoint parameters do not match the model (missing={missing}, unexpected={unexpected})"
        )
    for name, tensor in parameters.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise DimensionMismatchError(
                f"parameter {name} has shape {tuple(tensor.shape)}, model expects {tuple(expected[name].shape)}"
            )
    module.load_state_dict({name: t.to(expected[name].dtype) for name, t in parameters.items()})
    return metadata
