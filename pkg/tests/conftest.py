from __future__ import annotations

import copy

import pytest

from qaroute.kg import extract_phase1, postprocess, reinforce_phase3, validate_phase2
from qaroute.providers import HashingEmbedder, LexiconNer, ProviderBundle

from helpers import FIXTURES, load_corpus_chunks, reinforcement_samples


@pytest.fixture(scope="session")
def ner():
    return LexiconNer.from_file(FIXTURES / "lexicon.tsv")


@pytest.fixture(scope="session")
def embedder():
    return HashingEmbedder()


@pytest.fixture()
def bundle(ner, embedder):
    b = ProviderBundle.offline()
    b.ner = ner
    b.embedder = embedder
    return b


@pytest.fixture(scope="session")
def kg_chunks():
    return load_corpus_chunks()


@pytest.fixture(scope="session")
def chunk_texts(kg_chunks):
    return {c.chunk_id: c.text for c in kg_chunks}


@pytest.fixture(scope="session")
def _graph_stages(kg_chunks, chunk_texts, ner, embedder):
    """All four construction stages, each a deep snapshot."""
    g = extract_phase1(kg_chunks, ner)
    g0 = copy.deepcopy(g)
    g = validate_phase2(g, chunk_texts, embedder)
    g1 = copy.deepcopy(g)
    g = reinforce_phase3(g, reinforcement_samples(), embedder, ner)
    g2 = copy.deepcopy(g)
    g = postprocess(g, ner, embedder)
    return g0, g1, g2, g


@pytest.fixture(scope="session")
def graph_phase1(_graph_stages):
    return copy.deepcopy(_graph_stages[0])


@pytest.fixture(scope="session")
def graph_phase2(_graph_stages):
    return copy.deepcopy(_graph_stages[1])


@pytest.fixture(scope="session")
def graph_phase3(_graph_stages):
    return copy.deepcopy(_graph_stages[2])


@pytest.fixture(scope="session")
def graph_post(_graph_stages):
    return copy.deepcopy(_graph_stages[3])
