"""Core domain types: the three-action space, the multi-turn information state,
and the unified dataset record shared by every pipeline stage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional

from .text import normalize


class Action(str, Enum):
    ANSWER = "ANSWER"
    ASK = "ASK"
    ABSTAIN = "ABSTAIN"

    @classmethod
    def parse(cls, tag: str) -> "Action":
        try:
            return cls(tag)
        except ValueError:
            raise ValueError(f"unknown action tag: {tag!r}") from None


class StateError(ValueError):
    """Raised when an operation violates an information-state precondition."""


@dataclass(frozen=True)
class InformationState:
    """What a dialogue knows, is missing, and has resolved so far.

    ``known_variables`` and ``missing_variables`` are disjoint ordered tuples of
    normalized strings; ``constraints`` is an append-only ordered list of
    resolved facts and dialogue context.
    """

    known_variables: tuple[str, ...] = ()
    missing_variables: tuple[str, ...] = ()
    constraints: tuple[str, ...] = ()
    turn: int = 0

    def __post_init__(self) -> None:
        overlap = set(self.known_variables) & set(self.missing_variables)
        if overlap:
            raise StateError(f"variables both known and missing: {sorted(overlap)}")
        if self.turn < 0:
            raise StateError("turn must be non-negative")


def _ordered_unique(items) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for it in items:
        n = normalize(it)
        if n:
            seen.setdefault(n, None)
    return tuple(seen)


def init_state(query: str, retrieved_entities, required_vars,
               ner=None) -> InformationState:
    """Initial state for a fresh query: known variables are the query's named
    entities plus whatever retrieval surfaced; missing is the required set minus
    known."""
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    query_entities = [e.text for e in ner.ner(query)] if ner is not None else []
    known = _ordered_unique(list(query_entities) + list(retrieved_entities))
    missing = tuple(v for v in _ordered_unique(required_vars) if v not in known)
    return InformationState(known_variables=known, missing_variables=missing,
                            constraints=(), turn=0)


def incompleteness(state: InformationState) -> float:
    """Fraction of required variables still missing; 0 for the vacuous state."""
    total = len(state.known_variables) + len(state.missing_variables)
    if total == 0:
        return 0.0
    return len(state.missing_variables) / total


def resolution_rate(state: InformationState) -> float:
    return 1.0 - incompleteness(state)


def update_state(state: InformationState, asked_variable: str,
                 user_reply: str) -> InformationState:
    """Move a resolved variable from missing to known and record the reply as a
    constraint. The only mutation path for a state."""
    var = normalize(asked_variable)
    if var not in state.missing_variables:
        raise StateError(f"variable not in missing set: {asked_variable!r}")
    return replace(
        state,
        known_variables=state.known_variables + (var,),
        missing_variables=tuple(v for v in state.missing_variables if v != var),
        constraints=state.constraints + (f"{var} = {user_reply}",),
        turn=state.turn + 1,
    )


@dataclass(frozen=True)
class DialogueTurn:
    role: str  # "user" | "system"
    query: str
    action_taken: Optional[Action] = None
    resolved_variable: Optional[str] = None


FAILURE_MODES = ("COMPLETE", "INSUFFICIENT_VARIABLES", "MULTI_HOP_REQUIRED")
SOURCES = ("quac", "sharc", "hotpotqa", "contract_nli")


@dataclass
class ContextDocument:
    doc_id: str
    text: str
    url: Optional[str] = None
    file_name: Optional[str] = None
    chunk_idx: int = 0
    total_chunks: int = 1
    spans: list = field(default_factory=list)


@dataclass
class SampleState:
    known_variables: list[str] = field(default_factory=list)
    missing_variables: list[str] = field(default_factory=list)
    constraints: list[str] = field(default_factory=list)
    failure_mode: str = "INSUFFICIENT_VARIABLES"
    difficulty: str = "medium"
    completeness: str = "partial"


@dataclass
class SampleMetadata:
    source: str = "quac"
    multi_turn: bool = False
    turn_id: Optional[int] = None
    dialogue_id: Optional[str] = None
    requires_reasoning: bool = False
    num_missing_variables: int = 0
    variable_types: list[str] = field(default_factory=list)
    source_specific: dict[str, Any] = field(default_factory=dict)


@dataclass
class UnifiedSample:
    """One canonical dataset record, serialized as one JSON object per line."""

    id: str
    query: str
    context_documents: list[ContextDocument]
    state: SampleState
    action: Action
    response: str
    metadata: SampleMetadata

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "query": self.query,
            "context": {
                "documents": [
                    {
                        "doc_id": d.doc_id,
                        "text": d.text,
                        "url": d.url,
                        "file_name": d.file_name,
                        "chunk_idx": d.chunk_idx,
                        "total_chunks": d.total_chunks,
                        "spans": d.spans,
                    }
                    for d in self.context_documents
                ]
            },
            "state": {
                "known_variables": list(self.state.known_variables),
                "missing_variables": list(self.state.missing_variables),
                "constraints": list(self.state.constraints),
                "failure_mode": self.state.failure_mode,
                "difficulty": self.state.difficulty,
                "completeness": self.state.completeness,
            },
            "action": self.action.value,
            "response": self.response,
            "metadata": {
                "source": self.metadata.source,
                "multi_turn": self.metadata.multi_turn,
                "turn_id": self.metadata.turn_id,
                "dialogue_id": self.metadata.dialogue_id,
                "requires_reasoning": self.metadata.requires_reasoning,
                "num_missing_variables": self.metadata.num_missing_variables,
                "variable_types": list(self.metadata.variable_types),
                "source_specific": self.metadata.source_specific or None,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "UnifiedSample":
        docs = [
            ContextDocument(
                doc_id=x["doc_id"], text=x["text"], url=x.get("url"),
                file_name=x.get("file_name"), chunk_idx=x.get("chunk_idx", 0),
                total_chunks=x.get("total_chunks", 1), spans=x.get("spans", []),
            )
            for x in d.get("context", {}).get("documents", [])
        ]
        st = d["state"]
        md = d["metadata"]
        return cls(
            id=d["id"],
            query=d["query"],
            context_documents=docs,
            state=SampleState(
                known_variables=list(st.get("known_variables", [])),
                missing_variables=list(st.get("missing_variables", [])),
                constraints=list(st.get("constraints", [])),
                failure_mode=st.get("failure_mode", "INSUFFICIENT_VARIABLES"),
                difficulty=st.get("difficulty", "medium"),
                completeness=st.get("completeness", "partial"),
            ),
            action=Action.parse(d["action"]),
            response=d.get("response", ""),
            metadata=SampleMetadata(
                source=md["source"],
                multi_turn=md.get("multi_turn", False),
                turn_id=md.get("turn_id"),
                dialogue_id=md.get("dialogue_id"),
                requires_reasoning=md.get("requires_reasoning", False),
                num_missing_variables=md.get("num_missing_variables", 0),
                variable_types=list(md.get("variable_types", [])),
                source_specific=md.get("source_specific") or {},
            ),
        )

    @classmethod
    def from_json(cls, line: str) -> "UnifiedSample":
        return cls.from_dict(json.loads(line))
