"""Whitespace-and-punctuation tokenization shared by alignment, masking and probing.

A token is either a maximal run of word characters or a single punctuation
character.  All downstream matching is done on lowercased token text; character
offsets always refer to the original string.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def token_spans(text: str) -> list[tuple[int, int]]:
    """Return (char_start, char_end) for every token, left to right."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def tokens_lower(text: str) -> list[str]:
    """Lowercased token strings of ``text``."""
    return [m.group().lower() for m in _TOKEN_RE.finditer(text)]


def lower_aligned(text: str) -> str:
    """Lowercase ``text`` without shifting character offsets.

    The rare characters whose lowercase form has a different length (e.g.
    a dotted capital I) are kept as-is so that index i in the result always
    corresponds to index i in the input.
    """
    low = text.lower()
    if len(low) == len(text):
        return low
    return "".join(c.lower() if len(c.lower()) == 1 else c for c in text)


def word_starts(text: str, spans: list[tuple[int, int]]) -> list[bool]:
    """Flag tokens that begin a whitespace-delimited word.

    A token starts a word when it is the first token or when any whitespace
    separates it from the previous token.  Punctuation glued to a word (e.g.
    the period in "film.") belongs to that word.
    """
    flags: list[bool] = []
    prev_end = None
    for start, _end in spans:
        if prev_end is None:
            flags.append(True)
        else:
            flags.append(any(c.isspace() for c in text[prev_end:start]))
        prev_end = _end
    return flags


def count_words(surface: str) -> int:
    """Number of whitespace-separated chunks in ``surface``."""
    return len(surface.split())


def tokens_inside(spans: list[tuple[int, int]], start: int, end: int) -> list[int]:
    """Indices of tokens lying fully inside [start, end)."""
    return [i for i, (a, b) in enumerate(spans) if a >= start and b <= end]
