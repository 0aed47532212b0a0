"""Decision-weighted knowledge graph: three construction phases (raw
extraction, semantic validation, action reinforcement), post-processing, path
scoring, and JSON persistence.

Edge weights blend a semantic grounding score with an accumulated action
signal: ANSWER-supporting evidence is reinforced, ABSTAIN-associated evidence
penalised, and recoverable missing variables are injected as ``?var_``
placeholder nodes attached via ``requires`` edges."""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import Action, UnifiedSample
from .providers import (EmbeddingProvider, NerProvider, entity_candidate_ok)
from .retrieval import Chunk
from .text import split_sentences, tokenize

GRAPH_FORMAT_VERSION = 1

SEM_SVO = 0.8
SEM_PREP_CHAIN = 0.7
PHASE2_TAU = 0.50
FREQ_BONUS_SCALE = 0.03
ACT_INITIAL = 0.5
ACT_DELTAS = {Action.ANSWER: 0.20, Action.ASK: 0.05, Action.ABSTAIN: -0.10}
REQUIRES_WEIGHT = 0.9
ALPHA = 0.5
WEIGHT_CAP = 0.95
REANCHOR_TAU = 0.30
REQUIRES_RELATION = "requires"

VERBS = frozenset("""
release win defeat bear locate know disclose transfer refer require record sell
find found establish write direct produce star play marry die live move join
leave sign form create develop design build own acquire lead manage serve
represent include contain publish perform tour feature open close launch
announce graduate attend study teach work earn receive award nominate elect
appoint name call base headquarter situate compose begin start end follow
support oppose claim state report describe show prove cause help allow prohibit
permit restrict share retain return destroy use provide supply deliver pay hire
employ entitle
be have do make get go say take become seem appear
""".split())

WEAK_VERBS = frozenset("be have do make get go say take become seem appear".split())

PREPOSITIONS = frozenset("in on at by from to with for of as into onto over "
                         "under through during between against about".split())

_IRREGULAR = {
    "won": "win", "bore": "bear", "born": "bear", "borne": "bear",
    "was": "be", "were": "be", "is": "be", "are": "be", "am": "be",
    "been": "be", "being": "be", "had": "have", "has": "have",
    "did": "do", "does": "do", "done": "do", "made": "make", "got": "get",
    "went": "go", "said": "say", "took": "take", "taken": "take",
    "became": "become", "wrote": "write", "written": "write", "sold": "sell",
    "led": "lead", "left": "leave", "began": "begin", "begun": "begin",
    "knew": "know", "known": "know", "paid": "pay", "held": "hold",
    "gave": "give", "given": "give",
}


def verb_lemma(token: str) -> Optional[str]:
    """Map a surface token to a verb lemma from the pattern table, or None."""
    if token in _IRREGULAR:
        lemma = _IRREGULAR[token]
        return lemma if lemma in VERBS else None
    candidates = [token]
    for suffix in ("ing", "ed", "es", "d", "s"):
        if token.endswith(suffix) and len(token) > len(suffix) + 1:
            base = token[: -len(suffix)]
            candidates.append(base)
            candidates.append(base + "e")
            if len(base) >= 2 and base[-1] == base[-2]:
                candidates.append(base[:-1])
    for c in candidates:
        if c in VERBS:
            return c
    return None


def node_name(surface: str) -> str:
    """Node-name normalization: lowercase, trim, collapse whitespace. Leading
    articles are kept (the post-processor uses them as a noise criterion)."""
    return " ".join(surface.lower().split())


@dataclass
class KgNode:
    node_id: str
    name: str
    kind: str  # entity | variable
    category: Optional[str] = None       # entity nodes
    anchor_node: Optional[str] = None    # variable nodes
    origin_sample_id: Optional[str] = None
    origin_query: Optional[str] = None


@dataclass
class KgEdge:
    subject: str
    object: str
    relation: str
    sem: float
    act: float = ACT_INITIAL
    weight: float = 0.0
    freq: int = 1
    source_chunks: set[str] = field(default_factory=set)
    flags: list[str] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject, self.relation, self.object)

    def act_clamped(self) -> float:
        return min(1.0, max(0.0, self.act))

    def weight_uncapped(self, alpha: float = ALPHA) -> float:
        return alpha * self.sem + (1 - alpha) * self.act_clamped()

    def weight_capped(self, alpha: float = ALPHA) -> float:
        return min(WEIGHT_CAP, self.weight_uncapped(alpha))


class GraphError(ValueError):
    pass


@dataclass
class KnowledgeGraph:
    nodes: dict[str, KgNode] = field(default_factory=dict)
    edges: dict[tuple[str, str, str], KgEdge] = field(default_factory=dict)
    kb_to_nodes: dict[str, list[str]] = field(default_factory=dict)
    node_to_kbs: dict[str, list[str]] = field(default_factory=dict)
    phase_stats: dict[str, dict] = field(default_factory=dict)

    # -- structure helpers -------------------------------------------------

    def degree(self, node_id: str) -> int:
        return sum(1 for e in self.edges.values()
                   if e.subject == node_id or e.object == node_id)

    def adjacency(self) -> dict[str, list[tuple[str, KgEdge]]]:
        adj: dict[str, list[tuple[str, KgEdge]]] = defaultdict(list)
        for e in self.edges.values():
            adj[e.subject].append((e.object, e))
            adj[e.object].append((e.subject, e))
        for nbrs in adj.values():
            nbrs.sort(key=lambda t: t[0])
        return adj

    def prune_isolated(self) -> int:
        connected: set[str] = set()
        for e in self.edges.values():
            connected.add(e.subject)
            connected.add(e.object)
        doomed = [n for n in self.nodes if n not in connected]
        for n in doomed:
            del self.nodes[n]
        return len(doomed)

    def rebuild_indices(self) -> None:
        kb: dict[str, set[str]] = defaultdict(set)
        for e in self.edges.values():
            for chunk_id in e.source_chunks:
                kb[chunk_id].add(e.subject)
                kb[chunk_id].add(e.object)
        # entity membership recorded at extraction time is kept for surviving nodes
        for chunk_id, node_ids in self._extraction_membership.items():
            for n in node_ids:
                if n in self.nodes:
                    kb[chunk_id].add(n)
        self.kb_to_nodes = {c: sorted(ns) for c, ns in sorted(kb.items()) if ns}
        inv: dict[str, set[str]] = defaultdict(set)
        for c, ns in self.kb_to_nodes.items():
            for n in ns:
                inv[n].add(c)
        self.node_to_kbs = {n: sorted(cs) for n, cs in sorted(inv.items())}

    _extraction_membership: dict[str, list[str]] = field(default_factory=dict)

    def record_stats(self, phase: str) -> None:
        weights = [e.weight for e in self.edges.values()]
        self.phase_stats[phase] = {
            "node_count": len(self.nodes),
            "edge_count": len(self.edges),
            "avg_weight": (sum(weights) / len(weights)) if weights else 0.0,
        }

    def refresh_weights(self, capped: bool) -> None:
        for e in self.edges.values():
            e.weight = e.weight_capped() if capped else e.weight_uncapped()


# ---------------------------------------------------------------------------
# Phase 1 — extraction
# ---------------------------------------------------------------------------

def _extract_triples(sentence: str, entities, source: str):
    """Entity-constrained triples from one sentence: (subject, relation,
    object, sem). Weak verbs are filtered except for HotpotQA chunks, where
    relational verbs carry multi-hop signal."""
    ents = sorted(entities, key=lambda e: e.start)
    triples = []
    for a, b in zip(ents, ents[1:]):
        gap = sentence[a.end:b.start]
        tokens = tokenize(gap)
        lemma, prep = None, None
        for tok in tokens:
            v = verb_lemma(tok)
            if v is not None and lemma is None:
                if v in WEAK_VERBS and source != "hotpotqa":
                    continue
                lemma = v
            elif lemma is not None and tok in PREPOSITIONS and prep is None:
                prep = tok
        if lemma is None:
            continue
        if prep:
            triples.append((node_name(a.text), f"{lemma}_{prep}",
                            node_name(b.text), SEM_PREP_CHAIN))
        else:
            triples.append((node_name(a.text), lemma, node_name(b.text), SEM_SVO))
    return triples


def extract_phase1(chunks: Sequence[Chunk], ner: NerProvider) -> KnowledgeGraph:
    """G0: validated named-entity nodes plus entity-constrained triples."""
    g = KnowledgeGraph()
    errors = 0
    for chunk in chunks:
        try:
            chunk_entities = ner.ner(chunk.text)
        except Exception:
            errors += 1
            continue
        members: list[str] = []
        valid = []
        for ent in chunk_entities:
            if not entity_candidate_ok(ent.text):
                continue
            nid = node_name(ent.text)
            if nid not in g.nodes:
                g.nodes[nid] = KgNode(node_id=nid, name=nid, kind="entity",
                                      category=ent.category)
            members.append(nid)
            valid.append(ent)
        g._extraction_membership.setdefault(chunk.chunk_id, [])
        for m in members:
            if m not in g._extraction_membership[chunk.chunk_id]:
                g._extraction_membership[chunk.chunk_id].append(m)
        offset = 0
        for sent in split_sentences(chunk.text):
            start = chunk.text.find(sent, offset)
            end = start + len(sent)
            offset = end
            sent_ents = [
                type(ent)(text=ent.text, category=ent.category,
                          start=ent.start - start, end=ent.end - start)
                for ent in valid if ent.start >= start and ent.end <= end
            ]
            for subj, rel, obj, sem in _extract_triples(sent, sent_ents,
                                                        chunk.source):
                if subj == obj:
                    continue
                key = (subj, rel, obj)
                if key in g.edges:
                    g.edges[key].source_chunks.add(chunk.chunk_id)
                    g.edges[key].freq = len(g.edges[key].source_chunks)
                else:
                    g.edges[key] = KgEdge(subject=subj, relation=rel,
                                          object=obj, sem=sem,
                                          source_chunks={chunk.chunk_id})
    g.prune_isolated()
    g.refresh_weights(capped=False)
    g.rebuild_indices()
    g.record_stats("phase1")
    g.phase_stats["phase1"]["ner_errors"] = errors
    return g


# ---------------------------------------------------------------------------
# Phase 2 — semantic validation
# ---------------------------------------------------------------------------

def triple_sentence(g: KnowledgeGraph, edge: KgEdge) -> str:
    return f"{g.nodes[edge.subject].name} {edge.relation.replace('_', ' ')} " \
           f"{g.nodes[edge.object].name}"


def validate_phase2(g: KnowledgeGraph, chunk_texts: dict[str, str],
                    embedder: EmbeddingProvider,
                    tau: float = PHASE2_TAU) -> KnowledgeGraph:
    """G1: re-score each edge by the max cosine between its rendered triple
    sentence and its source chunks, plus a cross-document frequency bonus;
    drop edges below tau and prune newly isolated nodes."""
    chunk_vec: dict[str, np.ndarray] = {}
    ids = [c for c in sorted(chunk_texts) if chunk_texts[c].strip()]
    if ids:
        try:
            for cid, v in zip(ids, embedder.embed([chunk_texts[c] for c in ids])):
                chunk_vec[cid] = v
        except Exception:
            chunk_vec = {}  # per-edge embeds below will flag stale_sem
    doomed = []
    for key, edge in g.edges.items():
        try:
            tvec = embedder.embed([triple_sentence(g, edge)])[0]
            sims = [float(np.dot(tvec, chunk_vec[c]))
                    for c in edge.source_chunks if c in chunk_vec]
            base = max(sims) if sims else 0.0
            edge.sem = base + math.log(1 + edge.freq) * FREQ_BONUS_SCALE
        except Exception:
            edge.flags.append("stale_sem")
            continue
        if edge.sem < tau:
            doomed.append(key)
    for key in doomed:
        del g.edges[key]
    g.prune_isolated()
    g.refresh_weights(capped=False)
    g.rebuild_indices()
    g.record_stats("phase2")
    return g


# ---------------------------------------------------------------------------
# Phase 3 — decision reinforcement
# ---------------------------------------------------------------------------

def sample_chunk_ids(sample: UnifiedSample) -> list[str]:
    return [f"{d.doc_id}::c{d.chunk_idx}" for d in sample.context_documents]


def _bfs_shortest_path(adj, start: str, goal: str) -> Optional[list[str]]:
    """Unweighted BFS; ties resolved toward the lexicographically smallest
    node-id sequence by expanding sorted neighbours."""
    if start == goal:
        return [start]
    from collections import deque
    parent = {start: None}
    q = deque([start])
    while q:
        cur = q.popleft()
        for nbr, _ in adj.get(cur, []):
            if nbr not in parent:
                parent[nbr] = cur
                if nbr == goal:
                    path = [goal]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    return list(reversed(path))
                q.append(nbr)
    return None


def _edges_on_path(g: KnowledgeGraph, path: list[str]) -> list[KgEdge]:
    out = []
    for a, b in zip(path, path[1:]):
        out.extend(e for e in g.edges.values()
                   if {e.subject, e.object} == {a, b})
    return out


def reinforce_phase3(g: KnowledgeGraph, samples: Sequence[UnifiedSample],
                     embedder: EmbeddingProvider,
                     ner: NerProvider) -> KnowledgeGraph:
    """G2: per-sample action reinforcement on the edges of linked chunks,
    shortest-path propagation for HotpotQA, and ``?var_`` placeholder injection
    for ASK samples whose query entities are absent from the graph."""
    skipped = 0
    for sample in sorted(samples, key=lambda s: s.id):
        delta = ACT_DELTAS[sample.action]
        linked = [c for c in sample_chunk_ids(sample) if c in g.kb_to_nodes]
        if not linked and sample.context_documents:
            skipped += 1
        touched = set(linked)
        for edge in g.edges.values():
            if edge.relation == REQUIRES_RELATION:
                continue  # requires edges encode missing-information structure
            if edge.source_chunks & touched:
                edge.act += delta
        if sample.metadata.source == "hotpotqa" and linked:
            adj = g.adjacency()
            linked_nodes = sorted({n for c in linked for n in g.kb_to_nodes[c]})
            for i, a in enumerate(linked_nodes):
                for b in linked_nodes[i + 1:]:
                    path = _bfs_shortest_path(adj, a, b)
                    if path and len(path) > 1:
                        for edge in _edges_on_path(g, path):
                            if edge.relation != REQUIRES_RELATION:
                                edge.act += delta
        if sample.action is Action.ASK:
            _inject_variables(g, sample, linked, embedder, ner)
    g.refresh_weights(capped=False)
    g.rebuild_indices()
    g.record_stats("phase3")
    g.phase_stats["phase3"]["samples_skipped"] = skipped
    return g


def _inject_variables(g: KnowledgeGraph, sample: UnifiedSample,
                      linked_chunks: list[str],
                      embedder: EmbeddingProvider, ner: NerProvider) -> None:
    try:
        query_entities = ner.ner(sample.query)
    except Exception:
        return
    missing_names = []
    for ent in query_entities:
        nid = node_name(ent.text)
        if nid not in g.nodes and entity_candidate_ok(ent.text):
            missing_names.append(nid)
    if not missing_names:
        return
    candidate_ids = sorted({n for c in linked_chunks for n in g.kb_to_nodes[c]
                            if g.nodes[n].kind == "entity"})
    if not candidate_ids:
        candidate_ids = sorted(n for n, nd in g.nodes.items()
                               if nd.kind == "entity")
    if not candidate_ids:
        return
    qv = embedder.embed([sample.query])[0]
    name_vecs = embedder.embed([g.nodes[n].name for n in candidate_ids])
    sims = [float(np.dot(qv, v)) for v in name_vecs]
    anchor = candidate_ids[int(np.argmax(sims))]
    for n, missing in enumerate(missing_names, start=1):
        suffix = "" if len(missing_names) == 1 else f"_{n}"
        var_id = f"?var_{sample.id}{suffix}"
        if var_id in g.nodes:
            continue
        g.nodes[var_id] = KgNode(node_id=var_id, name=var_id, kind="variable",
                                 anchor_node=anchor,
                                 origin_sample_id=sample.id,
                                 origin_query=sample.query)
        g.edges[(anchor, REQUIRES_RELATION, var_id)] = KgEdge(
            subject=anchor, object=var_id, relation=REQUIRES_RELATION,
            sem=REQUIRES_WEIGHT, act=REQUIRES_WEIGHT, weight=REQUIRES_WEIGHT)


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------

def _is_mixed_alnum(name: str) -> bool:
    has_alpha = any(t.isalpha() for t in tokenize(name))
    has_num = any(any(ch.isdigit() for ch in t) for t in tokenize(name))
    return has_alpha and has_num


def postprocess(g: KnowledgeGraph, ner: NerProvider,
                embedder: EmbeddingProvider,
                reanchor_tau: float = REANCHOR_TAU) -> KnowledgeGraph:
    """Noise-node removal via second-pass NER over node names, variable
    re-anchoring, isolated-node pruning, and capped weight recomputation."""
    entity_ids = [n for n, nd in g.nodes.items() if nd.kind == "entity"]
    degrees = {n: g.degree(n) for n in g.nodes}
    mean_deg = (sum(degrees[n] for n in entity_ids) / len(entity_ids)) if entity_ids else 0.0
    noise: set[str] = set()
    for nid in entity_ids:
        name = g.nodes[nid].name
        try:
            # only a full-span mention counts; a recognized substring does not
            # legitimise a noisy wrapper like "the <entity>"
            recognized = any(m.text.lower() == name
                             for m in ner.ner(name))
        except Exception:
            recognized = True  # fail open: never drop nodes on provider error
        if recognized:
            continue
        hub = mean_deg > 0 and degrees[nid] > 3 * mean_deg
        short = len(name) <= 4
        the_prefixed = name.startswith("the ")
        if hub or short or the_prefixed or _is_mixed_alnum(name):
            noise.add(nid)
    for nid in noise:
        del g.nodes[nid]
    g.edges = {k: e for k, e in g.edges.items()
               if e.subject not in noise and e.object not in noise}

    # re-anchor orphaned variable nodes by origin-query similarity
    survivors = sorted(n for n, nd in g.nodes.items() if nd.kind == "entity")
    for var_id in [n for n, nd in g.nodes.items() if nd.kind == "variable"]:
        var = g.nodes[var_id]
        if var.anchor_node in g.nodes:
            continue
        best, best_sim = None, -1.0
        if survivors and var.origin_query:
            qv = embedder.embed([var.origin_query])[0]
            vecs = embedder.embed([g.nodes[n].name for n in survivors])
            for n, v in zip(survivors, vecs):
                sim = float(np.dot(qv, v))
                if sim > best_sim:
                    best, best_sim = n, sim
        if best is not None and best_sim >= reanchor_tau:
            var.anchor_node = best
            g.edges[(best, REQUIRES_RELATION, var_id)] = KgEdge(
                subject=best, object=var_id, relation=REQUIRES_RELATION,
                sem=REQUIRES_WEIGHT, act=REQUIRES_WEIGHT,
                weight=REQUIRES_WEIGHT)
        else:
            del g.nodes[var_id]
    g.edges = {k: e for k, e in g.edges.items()
               if e.subject in g.nodes and e.object in g.nodes}

    g.prune_isolated()
    g.refresh_weights(capped=True)
    g.rebuild_indices()
    g.record_stats("postprocess")
    return g


# ---------------------------------------------------------------------------
# Path scoring
# ---------------------------------------------------------------------------

def path_score(g: KnowledgeGraph, start: str, goal: str,
               max_hops: int = 4) -> float:
    """Max over simple paths of at most ``max_hops`` edges of the product of
    edge weights; 0 when no path connects the pair."""
    if start not in g.nodes or goal not in g.nodes:
        raise GraphError(f"unknown node: {start if start not in g.nodes else goal}")
    adj = g.adjacency()
    best = 0.0

    def dfs(node: str, visited: set[str], product: float, hops: int) -> None:
        nonlocal best
        if node == goal:
            best = max(best, product)
            return
        if hops == max_hops:
            return
        for nbr, edge in adj.get(node, []):
            if nbr in visited:
                continue
            dfs(nbr, visited | {nbr}, product * edge.weight, hops + 1)

    if start == goal:
        return 1.0
    dfs(start, {start}, 1.0, 0)
    return best


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _graph_payload(g: KnowledgeGraph) -> dict:
    return {
        "version": GRAPH_FORMAT_VERSION,
        "nodes": [
            {"node_id": n.node_id, "name": n.name, "kind": n.kind,
             "category": n.category, "anchor_node": n.anchor_node,
             "origin_sample_id": n.origin_sample_id,
             "origin_query": n.origin_query}
            for n in sorted(g.nodes.values(), key=lambda n: n.node_id)
        ],
        "edges": [
            {"subject": e.subject, "relation": e.relation, "object": e.object,
             "sem": e.sem, "act": e.act, "weight": e.weight, "freq": e.freq,
             "source_chunks": sorted(e.source_chunks), "flags": e.flags}
            for e in sorted(g.edges.values(), key=lambda e: e.key)
        ],
        "kb_to_nodes": g.kb_to_nodes,
        "node_to_kbs": g.node_to_kbs,
        "phase_stats": g.phase_stats,
        "extraction_membership": {c: ns for c, ns
                                  in sorted(g._extraction_membership.items())},
    }


def save(g: KnowledgeGraph, path: str | Path) -> None:
    payload = _graph_payload(g)
    body = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    doc = dict(payload)
    doc["content_digest"] = digest
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1),
                          encoding="utf-8")


def load(path: str | Path) -> KnowledgeGraph:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != GRAPH_FORMAT_VERSION:
        raise GraphError(f"unsupported graph version: {doc.get('version')}")
    digest = doc.pop("content_digest", None)
    body = json.dumps(doc, sort_keys=True, ensure_ascii=False)
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != digest:
        raise GraphError("graph file digest mismatch")
    g = KnowledgeGraph()
    for n in doc["nodes"]:
        g.nodes[n["node_id"]] = KgNode(**n)
    for e in doc["edges"]:
        edge = KgEdge(subject=e["subject"], relation=e["relation"],
                      object=e["object"], sem=e["sem"], act=e["act"],
                      weight=e["weight"], freq=e["freq"],
                      source_chunks=set(e["source_chunks"]),
                      flags=list(e.get("flags", [])))
        g.edges[edge.key] = edge
    g.kb_to_nodes = doc["kb_to_nodes"]
    g.node_to_kbs = doc["node_to_kbs"]
    g.phase_stats = doc["phase_stats"]
    g._extraction_membership = doc.get("extraction_membership", {})
    return g
