"""
Data validation helpers.

Small checks shared by loaders and commands: file presence, content
hashes and finiteness of numeric arrays.
"""

import hashlib
from pathlib import Path
from typing import Union

import numpy as np

from showcaseflow.core.exceptions import MissingFileError, NonFiniteValueError

PathLike = Union[str, Path]


def require_file(path: PathLike, what: str = "file") -> Path:
    """
    Ensure a file exists.

    Args:
        path: File to check
        what: Human-readable description used in the error message

    Returns:
        The path as a Path object

    Raises:
        MissingFileError: If the file does not exist
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path, what)
    return path


def sha256_file(path: PathLike, chunk_size: int = 1 << 20) -> str:
    """Hex SHA-256 digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ensure_finite(values: np.ndarray, what: str) -> np.ndarray:
    """Raise NonFiniteValueError if `values` holds NaN or infinity."""
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"non-finite value in {what}")
    return values
