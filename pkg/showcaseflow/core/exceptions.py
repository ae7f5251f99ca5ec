"""
Exception hierarchy for ShowcaseFlow.

Every error raised by the pipeline derives from ShowcaseError and carries
the process exit code the CLI reports for it.
"""

from typing import Optional


class ShowcaseError(Exception):
    """
    Base class for custom exceptions in the application.
    Allows specifying an exit code and detail message.
    """
    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class UsageError(ShowcaseError):
    """Invalid command-line usage or configuration values (exit 1)."""
    exit_code = 1


class DataError(ShowcaseError):
    """Input data is missing, malformed or inconsistent (exit 2)."""
    exit_code = 2


class NumericalError(ShowcaseError):
    """A numerical contract was violated (exit 3)."""
    exit_code = 3


# Data errors

class MissingFileError(DataError):
    """A required input file does not exist."""
    def __init__(self, path: object, what: str = "file"):
        super().__init__(f"missing {what}: {path}")
        self.path = path


class DimensionMismatchError(DataError):
    """Declared and actual dimensions or counts disagree."""


class DuplicateIdError(DataError):
    """An identifier appears more than once where ids must be unique."""


class UnresolvedReferenceError(DataError):
    """An EmbeddingRef or record id does not resolve."""


class DegenerateLabelsError(DataError):
    """Labelled data contains a single class."""
    def __init__(self, detail: str = "degenerate labels"):
        super().__init__(detail)


class EmptyCorpusError(DataError):
    """A corpus or candidate set that must be nonempty is empty."""


class ReferenceMissingError(DataError):
    """A generation has no reference explanation to be scored against."""


class VocabularyMismatchError(DataError):
    """Vocabulary and checkpoint disagree on size or token ids."""


# Numerical errors

class NonFiniteValueError(NumericalError):
    """A value, loss or gradient is NaN or infinite."""


class ShapeMismatchError(NumericalError):
    """Operands have incompatible shapes."""


class EmptyAxisError(NumericalError):
    """A reduction was requested over an empty axis."""


class DiversityUndefinedError(NumericalError):
    """A diversity measure needs at least two items."""
    def __init__(self, detail: str = "diversity undefined"):
        super().__init__(detail)
