"""Tokenization helpers shared by retrieval, alignment and the stubs."""

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:[.,][0-9]+)*[%]?")

STOPWORDS = frozenset(
    """a an the of in on at to for from by with and or but is was were are be been being
    as that this these those its it's it their his her our your which who whom what when
    where how did does do has have had per than then so such also into over about
    during s""".split()
)


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; keeps numbers like ``45.2`` and ``45.2%`` whole."""
    return _TOKEN_RE.findall(text.lower())


def content_tokens(text: str) -> list[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS]


def word_tokens(text: str) -> list[str]:
    """Content tokens without any digits."""
    return [t for t in content_tokens(text) if not any(ch.isdigit() for ch in t)]


def normalize_phrase(text: str) -> str:
    return " ".join(tokenize(text.replace("-", " ").replace("'", "")))


def contains_phrase(haystack: str, phrase: str) -> bool:
    """Whole-word, case-insensitive phrase containment (hyphens as spaces)."""
    h = f" {normalize_phrase(haystack)} "
    p = normalize_phrase(phrase)
    return bool(p) and f" {p} " in h
