"""Rule-based sentence splitting and word counting."""

from __future__ import annotations

# Tokens ending in a terminator that never close a sentence. Compared
# case-insensitively after stripping leading quotes/brackets.
ABBREVIATIONS = frozenset(
    {
        "e.g.",
        "i.e.",
        "etc.",
        "cf.",
        "vs.",
        "mr.",
        "mrs.",
        "ms.",
        "dr.",
        "prof.",
        "st.",
        "jr.",
        "sr.",
        "no.",
        "fig.",
        "approx.",
        "a.m.",
        "p.m.",
        "u.s.",
        "u.k.",
    }
)

_TERMINATORS = ".!?"
_LEADING_PUNCT = "\"'([{"


def _ends_sentence(token: str) -> bool:
    if token[-1] not in _TERMINATORS:
        return False
    return token.lower().lstrip(_LEADING_PUNCT) not in ABBREVIATIONS


def split_sentences(text: str) -> list[str]:
    """Split whitespace-normalized text into sentences.

    A sentence ends at '.', '!' or '?' followed by whitespace or end of
    text, unless the final token is on the abbreviation allowlist. Joining
    the result with single spaces reproduces the whitespace-normalized
    input exactly.
    """
    tokens = text.split()
    sentences: list[str] = []
    current: list[str] = []
    for token in tokens:
        current.append(token)
        if _ends_sentence(token):
            sentences.append(" ".join(current))
            current = []
    if current:
        sentences.append(" ".join(current))
    return sentences


def word_count(text: str) -> int:
    """Number of whitespace-delimited tokens."""
    return len(text.split())
