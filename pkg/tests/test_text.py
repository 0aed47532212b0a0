from hypothesis import given, strategies as st

from qaroute.text import (content_terms, normalize, split_sentences, tokenize,
                          word_count)


def test_normalize_strips_article_and_collapses():
    assert normalize("  The   Release Date ") == "release date"
    assert normalize("An Album") == "album"
    assert normalize("theatre") == "theatre"  # article must be a whole word


@given(st.text(max_size=60))
def test_normalize_idempotent(s):
    assert normalize(normalize(s)) == normalize(s)


def test_tokenize_lowercases_and_keeps_digits():
    assert tokenize("Dylan's 1976 Tour!") == ["dylan's", "1976", "tour"]


def test_content_terms_drop_stopwords():
    assert content_terms("who wrote the songs") == {"wrote", "songs"}


def test_word_count():
    assert word_count("a b  c") == 3


def test_split_sentences_basic():
    out = split_sentences("First one. Second one? Third!")
    assert out == ["First one.", "Second one?", "Third!"]


def test_split_sentences_abbreviation():
    out = split_sentences("Dr. Smith arrived. He left.")
    assert out == ["Dr. Smith arrived.", "He left."]


def test_split_sentences_no_split_on_lowercase():
    out = split_sentences("the file v1.2 is here. Done.")
    assert out == ["the file v1.2 is here.", "Done."]
