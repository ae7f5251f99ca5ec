"""
Base repository class for JSON-lines files.

This module provides a generic base repository that can be extended
for specific record types with common read and write operations.
"""

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Callable, Dict, Generic, Iterable, Iterator, List, Optional, TypeVar

from pydantic import ValidationError

from showcaseflow.core.exceptions import DataError, MissingFileError

logger = logging.getLogger(__name__)

# Type variable for the model class
ModelType = TypeVar("ModelType")


class JsonlRepository(Generic[ModelType], ABC):
    """
    Abstract repository over one JSON-lines file, one record per line.

    Documents are written with sorted keys and no trailing whitespace so
    that equal records always produce equal bytes.
    """

    what: str = "records"

    def __init__(self, path: Path):
        self.path = Path(path)

    @abstractmethod
    def _to_document(self, model: ModelType) -> Dict[str, Any]:
        """
        Convert model instance to a JSON document.

        Args:
            model: The model instance to convert

        Returns:
            Dict[str, Any]: JSON-compatible document
        """

    @abstractmethod
    def _from_document(self, document: Dict[str, Any]) -> ModelType:
        """
        Convert a JSON document to a model instance.

        Args:
            document: The parsed document

        Returns:
            ModelType: The model instance
        """

    def exists(self) -> bool:
        return self.path.is_file()

    def iter_all(self) -> Iterator[ModelType]:
        """
        Stream records from the file.

        Raises:
            MissingFileError: If the file does not exist
            DataError: If a line is not valid JSON or fails validation
        """
        if not self.exists():
            raise MissingFileError(self.path, self.what)
        with open(self.path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    yield self._from_document(json.loads(line))
                except (json.JSONDecodeError, ValidationError) as e:
                    raise DataError(f"{self.path}:{line_no}: invalid {self.what} record: {e}") from e

    def read_all(self) -> List[ModelType]:
        """Load every record in file order."""
        records = list(self.iter_all())
        logger.debug(f"Read {len(records)} {self.what} from {self.path}")
        return records

    def write_all(self, models: Iterable[ModelType]) -> int:
        """
        Replace the file with `models`.

        Returns:
            int: Number of records written
        """
        self.path.parent.mkdir(parents=True, exist_ok=True)
        count = 0
        with open(self.path, "w", encoding="utf-8") as f:
            for model in models:
                f.write(self._dumps(model))
                count += 1
        logger.debug(f"Wrote {count} {self.what} to {self.path}")
        return count

    def append(self, model: ModelType) -> None:
        """Append one record to the end of the file."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(self._dumps(model))

    def find(self, predicate: Callable[[ModelType], bool]) -> List[ModelType]:
        """Records satisfying `predicate`, in file order."""
        return [model for model in self.iter_all() if predicate(model)]

    def count(self) -> int:
        return sum(1 for _ in self.iter_all())

    def _dumps(self, model: ModelType) -> str:
        return json.dumps(self._to_document(model), sort_keys=True, ensure_ascii=False) + "\n"


class PydanticJsonlRepository(JsonlRepository[ModelType]):
    """JSON-lines repository for a pydantic model class."""

    model_class: Optional[type] = None

    def _to_document(self, model: ModelType) -> Dict[str, Any]:
        return model.model_dump(mode="json")

    def _from_document(self, document: Dict[str, Any]) -> ModelType:
        return self.model_class.model_validate(document)
