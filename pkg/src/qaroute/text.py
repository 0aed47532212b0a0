"""Shared lexical utilities: normalization, tokenization, stopwords, sentence
splitting, and the small fixed lexicons used by the ambiguity heuristics and the
entity validator.

The stopword list is shared between retrieval compression and the coverage
signal so both operate on the same notion of "content term".
"""

from __future__ import annotations

import re

# ~120 English function words.
STOPWORDS = frozenset("""
a about above after again against all am an and any are aren't as at be because
been before being below between both but by can cannot could couldn't did didn't
do does doesn't doing don't down during each few for from further had hadn't has
hasn't have haven't having he her here hers herself him himself his how i if in
into is isn't it its itself just me more most my myself no nor not of off on
once only or other our ours ourselves out over own same she should shouldn't so
some such than that the their theirs them themselves then there these they this
those through to too under until up very was wasn't we were weren't what when
where which while who whom why will with won't would wouldn't you your yours
yourself yourselves
""".split())

PRONOUNS = frozenset(
    "it he she they them him her this that these those its his hers theirs "
    "their itself himself herself themselves".split()
)

VAGUE_QUANTIFIERS = frozenset(
    "some any many few several most various stuff things something anything "
    "everything nothing somewhere anywhere someone anyone everybody somebody "
    "whatever whichever plenty lots".split()
)

COMPARATIVE_CUES = frozenset(
    "better worse best worst more less bigger smaller larger faster slower "
    "taller shorter cheaper older newer younger higher lower greater compare "
    "compared comparison versus vs difference than".split()
)

_ARTICLE_RE = re.compile(r"^(?:a|an|the)\s+", re.IGNORECASE)
_WS_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"[a-z0-9']+")


def normalize(s: str) -> str:
    """Canonical form for variable/entity strings: lowercase, trim, collapse
    inner whitespace, strip a leading article. Idempotent."""
    s = _WS_RE.sub(" ", s.strip().lower())
    return _ARTICLE_RE.sub("", s)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def content_terms(text: str) -> set[str]:
    """Non-stopword tokens of *text*, normalized."""
    return {t for t in tokenize(text) if t not in STOPWORDS}


def word_count(text: str) -> int:
    return len(text.split())


# Abbreviations that should not terminate a sentence.
_ABBREV = frozenset(["mr", "mrs", "ms", "dr", "prof", "st", "no", "vs", "etc",
                     "e.g", "i.e", "inc", "ltd", "co", "jr", "sr"])

_SENT_RE = re.compile(r"(?<=[.?!])\s+(?=[A-Z0-9\"'(])")


def split_sentences(text: str) -> list[str]:
    """Split on ./?/! followed by whitespace and a capital, with a small
    abbreviation blocklist."""
    parts = _SENT_RE.split(text.strip())
    out: list[str] = []
    for part in parts:
        if out:
            prev = out[-1]
            last = prev.rstrip(".").rsplit(None, 1)
            if last and last[-1].lower().rstrip(".") in _ABBREV and prev.endswith("."):
                out[-1] = prev + " " + part
                continue
        if part:
            out.append(part)
    return out
