"""Pre-generation evidence signals and the priority-ordered hard gate.

Signals: confidence (best rerank score), coverage (lexical query-term
completeness), ambiguity (mean of five binary heuristics), conflict (mean
pairwise embedding dissimilarity), and their product, the joint answerability
signal. The gate maps signals plus the answerability-classifier label to one of
the three actions via six rules in strict priority order."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .core import Action
from .providers import ChatMessage, ChatProvider, NamedEntity
from .text import (COMPARATIVE_CUES, PRONOUNS, STOPWORDS, VAGUE_QUANTIFIERS,
                   content_terms, tokenize)

CONFLICT_TOP_K = 4
AMBIGUITY_HEURISTICS = ("length", "pronoun", "quantifier", "no_entity",
                        "incomplete_comparison")


@dataclass(frozen=True)
class HeuristicHits:
    length: bool = False
    pronoun: bool = False
    quantifier: bool = False
    no_entity: bool = False
    incomplete_comparison: bool = False

    def as_tuple(self) -> tuple[bool, ...]:
        return (self.length, self.pronoun, self.quantifier, self.no_entity,
                self.incomplete_comparison)


@dataclass
class SignalVector:
    confidence: float
    coverage: float
    ambiguity: float
    conflict: float
    answerability: float
    heuristic_hits: HeuristicHits = field(default_factory=HeuristicHits)
    degenerate_query: bool = False

    def to_dict(self) -> dict:
        return {
            "confidence": self.confidence,
            "coverage": self.coverage,
            "ambiguity": self.ambiguity,
            "conflict": self.conflict,
            "answerability": self.answerability,
            "heuristic_hits": dict(zip(AMBIGUITY_HEURISTICS,
                                       self.heuristic_hits.as_tuple())),
            "degenerate_query": self.degenerate_query,
        }


@dataclass
class GateThresholds:
    tau_conflict: float = 0.70
    tau_conf: float = 0.35
    tau_cov: float = 0.30
    tau_amb: float = 0.45
    tau_i: float = 0.0  # incompleteness above this blocks rule 6's ANSWER


class AnswerabilityLabel(str, Enum):
    ANSWERABLE = "ANSWERABLE"
    NEEDS_CLARIFICATION = "NEEDS_CLARIFICATION"
    NOT_ANSWERABLE = "NOT_ANSWERABLE"


def confidence(rerank_scores: Sequence[float]) -> float:
    """Maximum rerank score; 0 for an empty retrieval."""
    return max(rerank_scores) if rerank_scores else 0.0


def coverage(query: str, chunks: Sequence[str]) -> float:
    """Fraction of the query's non-stopword terms present in the chunk set; 0
    for a query with no content terms."""
    q_terms = content_terms(query)
    if not q_terms:
        return 0.0
    chunk_terms: set[str] = set()
    for c in chunks:
        chunk_terms |= content_terms(c)
    return len(q_terms & chunk_terms) / len(q_terms)


def is_degenerate_query(query: str) -> bool:
    return not content_terms(query)


def _dangling_pronoun(tokens: Sequence[str]) -> bool:
    # a pronoun counts as dangling when no content word precedes it
    for i, tok in enumerate(tokens):
        if tok in PRONOUNS:
            prior = tokens[:i]
            if not any(p not in STOPWORDS and p not in PRONOUNS and len(p) >= 3
                       for p in prior):
                return True
    return False


def ambiguity(query: str,
              entities: Sequence[NamedEntity]) -> tuple[float, HeuristicHits]:
    """Mean of five binary heuristics: short query, dangling pronoun, vague
    quantifier, no named entities, incomplete comparison."""
    tokens = tokenize(query)
    cues = set(tokens) & COMPARATIVE_CUES
    hits = HeuristicHits(
        length=len(query.split()) <= 4,
        pronoun=_dangling_pronoun(tokens),
        quantifier=bool(set(tokens) & VAGUE_QUANTIFIERS),
        no_entity=len(entities) == 0,
        incomplete_comparison=bool(cues) and len(entities) < 2,
    )
    return sum(hits.as_tuple()) / 5.0, hits


def conflict(chunk_embeddings: Sequence[np.ndarray],
             top_k: int = CONFLICT_TOP_K) -> float:
    """One minus the mean pairwise cosine over the top-k embeddings, clamped to
    [0,1]; 0 with fewer than two embeddings."""
    vecs = list(chunk_embeddings)[:top_k]
    if len(vecs) < 2:
        return 0.0
    sims = [float(np.dot(a, b)) for a, b in combinations(vecs, 2)]
    return min(1.0, max(0.0, 1.0 - sum(sims) / len(sims)))


def answerability(conf: float, cov: float, amb: float, confl: float) -> float:
    """Product-form joint signal: confidence * coverage * (1-ambiguity) *
    (1-conflict). Any single failing factor collapses it."""
    for v in (conf, cov, amb, confl):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"signal out of [0,1]: {v}")
    return conf * cov * (1.0 - amb) * (1.0 - confl)


def compute_signals(query: str, rerank_scores: Sequence[float],
                    chunk_texts: Sequence[str],
                    chunk_embeddings: Sequence[np.ndarray],
                    entities: Sequence[NamedEntity]) -> SignalVector:
    conf = confidence(rerank_scores)
    cov = coverage(query, chunk_texts)
    amb, hits = ambiguity(query, entities)
    cf = conflict(chunk_embeddings)
    return SignalVector(confidence=conf, coverage=cov, ambiguity=amb,
                        conflict=cf,
                        answerability=answerability(conf, cov, amb, cf),
                        heuristic_hits=hits,
                        degenerate_query=is_degenerate_query(query))


CLASSIFIER_PROMPT = (
    "Decide whether the context below is sufficient to answer the query.\n"
    "Respond with exactly one word: ANSWERABLE, NEEDS_CLARIFICATION, or "
    "NOT_ANSWERABLE.\n\nQuery: {query}\n\nContext:\n{context}\n\nLabel:")


def classify_answerability(query: str, compressed_context: str,
                           chat: ChatProvider) -> tuple[AnswerabilityLabel, bool]:
    """Lightweight sufficiency classifier. Unparseable output or provider
    failure maps to NEEDS_CLARIFICATION with a degraded flag."""
    prompt = CLASSIFIER_PROMPT.format(query=query, context=compressed_context)
    try:
        out = chat.chat([ChatMessage("user", prompt)])
    except Exception:
        return AnswerabilityLabel.NEEDS_CLARIFICATION, True
    token = out.strip().upper()
    # longest label first: NOT_ANSWERABLE contains ANSWERABLE as a substring
    for label in sorted(AnswerabilityLabel, key=lambda l: -len(l.value)):
        if label.value in token:
            return label, False
    return AnswerabilityLabel.NEEDS_CLARIFICATION, True


def hard_gate(signals: SignalVector, incompleteness: float,
              label: AnswerabilityLabel,
              thresholds: Optional[GateThresholds] = None) -> tuple[Action, int]:
    """Priority-ordered six-rule gate; returns the action and the fired rule
    index (1..6). Rule 6 only commits to ANSWER while incompleteness stays at or
    below ``tau_i``."""
    t = thresholds or GateThresholds()
    if signals.conflict > t.tau_conflict:
        return Action.ASK, 1
    if signals.confidence < t.tau_conf and signals.coverage < t.tau_cov:
        return Action.ABSTAIN, 2
    if signals.ambiguity > t.tau_amb:
        return Action.ASK, 3
    if label is AnswerabilityLabel.NOT_ANSWERABLE:
        return Action.ABSTAIN, 4
    if label is AnswerabilityLabel.NEEDS_CLARIFICATION:
        return Action.ASK, 5
    if incompleteness > t.tau_i:
        return Action.ASK, 6
    return Action.ANSWER, 6
