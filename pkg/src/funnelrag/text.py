"""Tokenization and string normalization shared across the pipeline.

Two tokenizers coexist on purpose: `ws_tokens` defines unit sizes
(cluster budgets, passage windows), `analyze` defines index/match terms.
Keeping them separate means changing the index analyzer can never break
segmentation round-trips.
"""

from __future__ import annotations

import re
import string

# Unicode alphanumeric runs; underscore counts as a separator.
_TERM_RE = re.compile(r"[^\W_]+", re.UNICODE)
_WS_RE = re.compile(r"\s+")
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def ws_tokens(text: str) -> list[str]:
    """Split into maximal runs of non-whitespace characters."""
    return text.split()


def token_count(text: str) -> int:
    return len(text.split())


def analyze(text: str) -> list[str]:
    """Index analyzer: lowercase, split on non-alphanumeric. No stemming."""
    return _TERM_RE.findall(text.lower())


def normalize_match(text: str) -> str:
    """Answer-containment normalization: lowercase + whitespace collapse."""
    return _WS_RE.sub(" ", text.lower()).strip()


def normalize_em(text: str) -> str:
    """Exact-match normalization: lowercase, strip punctuation, drop
    a/an/the, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return _WS_RE.sub(" ", text).strip()
