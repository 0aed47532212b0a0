"""Shared builders for test graphs and dialogues."""

from __future__ import annotations

import json
from pathlib import Path

from qaroute.core import (Action, ContextDocument, SampleMetadata, SampleState,
                          UnifiedSample)
from qaroute.kg import (ACT_INITIAL, REQUIRES_RELATION, REQUIRES_WEIGHT,
                        KgEdge, KgNode, KnowledgeGraph)
from qaroute.retrieval import chunk_document

FIXTURES = Path(__file__).parent / "fixtures"


def load_corpus_chunks():
    chunks = []
    for line in (FIXTURES / "kg_corpus.jsonl").read_text(
            encoding="utf-8").splitlines():
        rec = json.loads(line)
        chunks.extend(chunk_document(rec["doc_id"], rec["text"], rec["source"]))
    return chunks


def make_sample(sid, query, action, known=(), missing=(), source="quac",
                doc_ids=(), dialogue_id=None, turn_id=None,
                failure_mode=None, response="ok"):
    if failure_mode is None:
        failure_mode = ("COMPLETE" if action is Action.ANSWER
                        else "INSUFFICIENT_VARIABLES")
    return UnifiedSample(
        id=sid,
        query=query,
        context_documents=[ContextDocument(doc_id=d, text="") for d in doc_ids],
        state=SampleState(known_variables=list(known),
                          missing_variables=list(missing),
                          failure_mode=failure_mode,
                          completeness=("complete" if action is Action.ANSWER
                                        else "partial")),
        action=action,
        response=response,
        metadata=SampleMetadata(source=source, multi_turn=dialogue_id is not None,
                                turn_id=turn_id, dialogue_id=dialogue_id,
                                num_missing_variables=len(missing)),
    )


def reinforcement_samples():
    """Three single-action samples linked to the fixture corpus chunks."""
    s_ans = make_sample("r-ans", "Who wrote Hurricane?", Action.ANSWER,
                        known=["bob dylan"], source="quac",
                        doc_ids=["d01", "d05"])
    s_ask = make_sample("r-ask", "What did Gracie Films produce?", Action.ASK,
                        missing=["the production"], source="quac",
                        doc_ids=["d02"])
    s_abs = make_sample("r-abs", "Where was the contract signed?",
                        Action.ABSTAIN, source="contract_nli",
                        doc_ids=["d04"])
    return [s_ans, s_ask, s_abs]


def _edge(subject, relation, obj, sem, act=ACT_INITIAL):
    e = KgEdge(subject=subject, relation=relation, object=obj, sem=sem, act=act)
    e.weight = e.weight_capped()
    return e


def golden_graph() -> KnowledgeGraph:
    """Small frozen graph for the multi-turn clarification dialogue: one
    concept node carrying a missing-information placeholder."""
    g = KnowledgeGraph()
    for nid, cat in (("album", "Concept"), ("desire", "Work"),
                     ("columbia records", "Organisation")):
        g.nodes[nid] = KgNode(node_id=nid, name=nid, kind="entity",
                              category=cat)
    g.nodes["?var_g1"] = KgNode(node_id="?var_g1", name="?var_g1",
                                kind="variable", anchor_node="album",
                                origin_sample_id="quac-d42-t1",
                                origin_query="When was the album released?")
    edges = [
        _edge("desire", "be", "album", sem=0.8, act=0.7),
        _edge("columbia records", "release", "desire", sem=0.8, act=0.9),
        KgEdge(subject="album", relation=REQUIRES_RELATION, object="?var_g1",
               sem=REQUIRES_WEIGHT, act=REQUIRES_WEIGHT,
               weight=REQUIRES_WEIGHT),
    ]
    for e in edges:
        g.edges[e.key] = e
    g.rebuild_indices()
    return g


def golden_dialogue():
    """Two-turn clarification dialogue: the first turn asks for the release
    date, the second for sales performance."""
    t1 = make_sample("quac-d42-t1", "When was the album released?", Action.ASK,
                     known=["album"], missing=["release date"],
                     source="quac", dialogue_id="quac-d42", turn_id=1)
    t2 = make_sample("quac-d42-t2", "How did the album sell?", Action.ASK,
                     known=["album", "release date"],
                     missing=["sales performance"],
                     source="quac", dialogue_id="quac-d42", turn_id=2)
    return [t1, t2]
