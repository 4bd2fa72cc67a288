"""Answer text normalization and gold matching rules."""

from __future__ import annotations

import re
import string

_WHITESPACE_RE = re.compile(r"\s+")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    lowered = text.lower().translate(_PUNCT_TABLE)
    return _WHITESPACE_RE.sub(" ", lowered).strip()


def extract_option_letter(text: str, labels: list[str]) -> str | None:
    """First standalone occurrence of any option label, case-insensitive.

    Tolerates wrappers like "A.", "(A)" and prefixes like "Answer: A".
    Returns the canonical label, or None when no label stands alone.
    """
    if not labels:
        return None
    alternatives = "|".join(re.escape(label) for label in labels)
    pattern = re.compile(rf"(?<![A-Za-z0-9])({alternatives})(?![A-Za-z0-9])", re.IGNORECASE)
    match = pattern.search(text)
    if match is None:
        return None
    hit = match.group(1)
    for label in labels:
        if label.lower() == hit.lower():
            return label
    return None


def leading_yes_no(text: str) -> str | None:
    """The leading yes/no token after normalization, if any."""
    normalized = normalize_answer(text)
    first = normalized.split(" ", 1)[0] if normalized else ""
    return first if first in ("yes", "no") else None
