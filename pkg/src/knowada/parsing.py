"""Parsers for constrained model responses.

Every backend that produces structure does so through one of these three
protocols: a JSON array of strings, a single token from a fixed set, or a
single probability. Anything else is a structured-output error carrying the
raw text.
"""

from __future__ import annotations

import json
import re
from fractions import Fraction

from .errors import ContractError, StructuredOutputError

_FENCE = re.compile(r"```(?:[a-zA-Z0-9_-]*)?\s*\n(.*?)\n\s*```", re.DOTALL)
_NUMBER = re.compile(r"\d+\.\d+|\.\d+|\d+")


def _strip_fences(text: str) -> str:
    match = _FENCE.search(text)
    return match.group(1) if match else text


def parse_string_array(text: str) -> list[str]:
    """Parse a response expected to be a JSON array of non-empty strings.

    Tolerates markdown code fences and surrounding prose, as long as a
    single JSON array is present.
    """
    candidate = _strip_fences(text).strip()
    if not candidate.startswith("["):
        start, end = candidate.find("["), candidate.rfind("]")
        if start == -1 or end == -1 or end < start:
            raise StructuredOutputError("no JSON array found in response", text)
        candidate = candidate[start : end + 1]
    try:
        parsed = json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise StructuredOutputError(f"invalid JSON array ({exc.msg})", text) from exc
    if not isinstance(parsed, list) or not all(isinstance(item, str) for item in parsed):
        raise StructuredOutputError("expected a JSON array of strings", text)
    items = [item.strip() for item in parsed]
    if any(not item for item in items):
        raise StructuredOutputError("array contains an empty string", text)
    return items


def scan_token(text: str, tokens: dict[str, str]) -> str | None:
    """Return the mapped value for the first whole-word token found in the
    response, case-insensitively; None when no token occurs.

    Tokens are matched on word boundaries, so e.g. a verdict word embedded
    in a longer word does not count.
    """
    pattern = re.compile(
        r"\b(" + "|".join(sorted(tokens, key=len, reverse=True)) + r")\b", re.IGNORECASE
    )
    match = pattern.search(text)
    if match is None:
        return None
    return tokens[match.group(1).lower()]


def parse_probability(text: str) -> Fraction:
    """Extract the first number from a response and require it in [0, 1].

    Returned as an exact rational so threshold comparisons have no float
    ambiguity.
    """
    match = _NUMBER.search(text)
    if match is None:
        raise StructuredOutputError("no number found in probability response", text)
    value = Fraction(match.group(0))
    if not 0 <= value <= 1:
        raise ContractError(f"probability {match.group(0)} outside [0, 1]")
    return value
