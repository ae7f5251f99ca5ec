"""
Text utility functions for ShowcaseFlow.

Contains the tokenization patterns shared by the vocabulary, the n-gram
metrics and the sentence splitter.
"""

import re
from typing import List, Sequence

# Words (with inner apostrophes) or single punctuation marks
TOKEN_PATTERN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?|[^\sa-z0-9]", re.IGNORECASE)
WHITESPACE_PATTERN = re.compile(r"\s+")
SENTENCE_END_TOKENS = frozenset({".", "!", "?"})


def normalize_text(text: str) -> str:
    """Lowercase, strip control characters and collapse whitespace."""
    text = "".join(ch for ch in text if ch >= " " or ch in ("\n", "\t"))
    text = WHITESPACE_PATTERN.sub(" ", text)
    return text.strip().lower()


def tokenize(text: str) -> List[str]:
    """
    Split text into word and punctuation tokens.

    Args:
        text: Raw text

    Returns:
        List of lowercase tokens
    """
    return TOKEN_PATTERN.findall(normalize_text(text))


def split_sentences(tokens: Sequence[str]) -> List[List[str]]:
    """
    Split a token sequence into sentences at sentence-final punctuation.

    The returned sentences concatenate back to `tokens`; a trailing
    fragment without final punctuation forms its own sentence.
    """
    sentences: List[List[str]] = []
    current: List[str] = []
    for token in tokens:
        current.append(token)
        if token in SENTENCE_END_TOKENS:
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def find_subsequence(haystack: Sequence[str], needle: Sequence[str], start: int = 0) -> int:
    """Index of the first occurrence of `needle` in `haystack` at or after `start`, or -1."""
    n = len(needle)
    if n == 0:
        return -1
    for i in range(start, len(haystack) - n + 1):
        if list(haystack[i:i + n]) == list(needle):
            return i
    return -1
