"""Acting layer: the planner output grammar and parser, the three action
agents (answer / ask / abstain) with deterministic fallbacks, single-turn
routing, and a multi-turn session driver."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import (Action, InformationState, incompleteness, init_state,
                   resolution_rate, update_state)
from .decision import (AnswerabilityLabel, GateThresholds, SignalVector,
                       classify_answerability, compute_signals, hard_gate)
from .ftdata import PLANNER_SYSTEM_PROMPT, build_question, query_head_noun
from .providers import ChatMessage, ChatProvider, ProviderBundle
from .retrieval import Chunk, HybridIndex, rerank_and_compress

MIN_ASK_CHARS = 10
MIN_ABSTAIN_CHARS = 20

PLANNER_FALLBACK_REASON = "query_too_vague"


@dataclass
class PlannerDecision:
    action: Action
    reasoning: str = ""
    justification: str = ""
    clarification_question: Optional[str] = None
    strict: bool = True       # False when tags only matched case-insensitively
    fallback: bool = False    # True when parsing failed and we defaulted
    parse_errors: list[str] = field(default_factory=list)


_GRAMMAR = (r"\s*<reasoning>(?P<reasoning>.*?)</reasoning>"
            r"\s*<decision>(?P<decision>.*?)</decision>"
            r"\s*<justification>(?P<justification>.*?)</justification>"
            r"\s*(?:<clarification_question>(?P<cq>.*?)"
            r"</clarification_question>\s*)?")


def parse_planner_output(text: str) -> tuple[Optional[PlannerDecision], list[str]]:
    """Strict tag-sequence parser: reasoning, decision, justification in order,
    optional clarification question. A case-insensitive match is accepted but
    flagged non-strict. Returns (decision, errors); errors imply no decision."""
    errors: list[str] = []
    if not text or not text.strip():
        return None, ["empty output"]
    strict = True
    m = re.fullmatch(_GRAMMAR, text, re.DOTALL)
    if m is None:
        m = re.fullmatch(_GRAMMAR, text, re.DOTALL | re.IGNORECASE)
        strict = False
    if m is None:
        for tag in ("reasoning", "decision", "justification"):
            if f"<{tag}>" not in text or f"</{tag}>" not in text:
                errors.append(f"missing tag: {tag}")
        if not errors:
            errors.append("tags present but out of order or with stray text")
        return None, errors
    reasoning = m.group("reasoning").strip()
    decision_raw = m.group("decision").strip()
    justification = m.group("justification").strip()
    cq = m.group("cq")
    if not reasoning:
        errors.append("empty reasoning")
    try:
        action = Action.parse(decision_raw.upper())
    except ValueError:
        errors.append(f"unknown decision: {decision_raw!r}")
        return None, errors
    if decision_raw != action.value:
        strict = False
    if not justification:
        errors.append("empty justification")
    if errors:
        return None, errors
    cq_text = cq.strip() if cq is not None else None
    if action is Action.ASK and not cq_text:
        cq_text = justification  # ASK without an explicit question block
    return PlannerDecision(action=action, reasoning=reasoning,
                           justification=justification,
                           clarification_question=cq_text, strict=strict), []


def plan(user_block: str, chat: ChatProvider) -> PlannerDecision:
    """One planner call. Unparseable output degrades to a safe ABSTAIN."""
    out = chat.chat([ChatMessage("system", PLANNER_SYSTEM_PROMPT),
                     ChatMessage("user", user_block)])
    decision, errors = parse_planner_output(out)
    if decision is not None:
        return decision
    return PlannerDecision(action=Action.ABSTAIN,
                           justification=PLANNER_FALLBACK_REASON,
                           fallback=True, parse_errors=errors)


# ---------------------------------------------------------------------------
# action agents
# ---------------------------------------------------------------------------

NO_CONTEXT_REFUSAL = ("I cannot answer this: no supporting material was "
                      "retrieved for the query.")

ANSWER_PROMPT = ("Answer the query using only the sources below. Cite nothing "
                 "outside them.\n\n{context}\n\nQuery: {query}\n\nAnswer:")

ASK_PROMPT = ("The query below cannot be answered yet because this detail is "
              "missing: {missing}. Write one short clarifying question for the "
              "user.\n\nQuery: {query}\n\nClarifying question:")

ABSTAIN_PROMPT = ("Politely explain in one or two sentences that the query "
                  "below cannot be answered. Reason: {reason}\n\n"
                  "Query: {query}\n\nExplanation:")


def context_blocks(kept: Sequence[tuple[Chunk, str]]) -> str:
    lines = []
    for i, (chunk, compressed) in enumerate(kept, start=1):
        lines.append(f"[Source {i} | {chunk.source} | {chunk.granularity}]\n"
                     f"{compressed}")
    return "\n\n".join(lines)


def answer_agent(query: str, kept: Sequence[tuple[Chunk, str]],
                 chat: ChatProvider) -> str:
    """Grounded answer over the compressed retrieval; refuses with a fixed
    string when there is nothing to ground on."""
    if not kept:
        return NO_CONTEXT_REFUSAL
    prompt = ANSWER_PROMPT.format(context=context_blocks(kept), query=query)
    return chat.chat([ChatMessage("user", prompt)]).strip()


def ask_agent(query: str, state: InformationState, chat: ChatProvider,
              embedder) -> tuple[str, Optional[str]]:
    """Clarifying question plus the variable it targets (None for signal-driven
    asks with no tracked missing variable). Chat output that is too short or
    not a question falls back to the deterministic template."""
    missing = state.missing_variables[0] if state.missing_variables else None
    if missing:
        fallback = build_question(missing, state.known_variables, embedder,
                                  query=query)
        prompt = ASK_PROMPT.format(missing=missing, query=query)
    else:
        fallback = (f"Could you clarify what you mean by "
                    f"'{query_head_noun(query)}'?")
        prompt = ASK_PROMPT.format(missing="the intended scope of the question",
                                   query=query)
    out = chat.chat([ChatMessage("user", prompt)]).strip()
    if len(out) < MIN_ASK_CHARS or not out.endswith("?"):
        out = fallback
    return out, missing


def abstain_agent(query: str, reason: str, chat: ChatProvider) -> str:
    """Abstention message; short or empty chat output falls back to a fixed
    template carrying the reason."""
    fallback = (f"I'm unable to answer this query. {reason} "
                "You may want to consult a specialised source.")
    out = chat.chat([ChatMessage("user",
                                 ABSTAIN_PROMPT.format(reason=reason,
                                                       query=query))]).strip()
    if len(out) < MIN_ABSTAIN_CHARS:
        return fallback
    return out


_RULE_REASONS = {
    1: "The retrieved sources disagree with each other.",
    2: "The retrieved material does not cover this topic.",
    4: "The available context does not contain the answer.",
}


# ---------------------------------------------------------------------------
# routing
# ---------------------------------------------------------------------------

@dataclass
class TurnResult:
    action: Action
    rule: int
    response: str
    signals: SignalVector
    label: AnswerabilityLabel
    asked_variable: Optional[str] = None
    retrieved: list[tuple[str, str]] = field(default_factory=list)
    degraded: list[str] = field(default_factory=list)
    resolution: float = 1.0


def route_turn(query: str, state: InformationState, bundle: ProviderBundle,
               index: HybridIndex, thresholds: Optional[GateThresholds] = None,
               k: int = 5, alpha: float = 0.5,
               use_classifier: bool = True) -> TurnResult:
    """One full decision turn: hybrid retrieval, rerank+compress, evidence
    signals, sufficiency label, hard gate, then the selected action agent.
    With ``use_classifier`` off the label is fixed to ANSWERABLE, leaving the
    decision to the numeric signals and the state alone."""
    degraded: list[str] = []
    results, empty = index.hybrid_retrieve(query, bundle.embedder, k=k,
                                           alpha=alpha)
    kept: list[tuple[Chunk, str]] = []
    if results:
        kept, rr_degraded = rerank_and_compress(query, results, bundle.reranker)
        if rr_degraded:
            degraded.append("reranker")
    if empty:
        degraded.append("empty_index")

    rerank_scores = []
    if kept:
        try:
            rerank_scores = bundle.reranker.rerank(query,
                                                   [c for _, c in kept])
        except Exception:
            degraded.append("reranker")
    entities = bundle.ner.ner(query)
    embeddings = [r.chunk.embedding for r in results
                  if r.chunk.embedding is not None]
    signals = compute_signals(query, rerank_scores,
                              [c for _, c in kept], embeddings, entities)

    if use_classifier and kept:
        compressed = "\n".join(c for _, c in kept)
        label, cls_degraded = classify_answerability(query, compressed,
                                                     bundle.chat)
        if cls_degraded:
            degraded.append("classifier")
    elif use_classifier:
        label = AnswerabilityLabel.NOT_ANSWERABLE
    else:
        label = AnswerabilityLabel.ANSWERABLE

    inc = incompleteness(state)
    action, rule = hard_gate(signals, inc, label, thresholds)

    asked = None
    if action is Action.ANSWER:
        response = answer_agent(query, kept, bundle.chat)
    elif action is Action.ASK:
        response, asked = ask_agent(query, state, bundle.chat, bundle.embedder)
    else:
        reason = _RULE_REASONS.get(rule,
                                   "The query cannot be resolved from the "
                                   "available material.")
        response = abstain_agent(query, reason, bundle.chat)
    return TurnResult(action=action, rule=rule, response=response,
                      signals=signals, label=label, asked_variable=asked,
                      retrieved=[(c.chunk_id, comp) for c, comp in kept],
                      degraded=degraded, resolution=resolution_rate(state))


class Session:
    """Multi-turn dialogue driver. ``start`` opens a dialogue from a query;
    ``reply`` feeds the user's answer to a pending clarification back into the
    information state and re-decides."""

    def __init__(self, bundle: ProviderBundle, index: HybridIndex,
                 thresholds: Optional[GateThresholds] = None,
                 use_classifier: bool = True, k: int = 5, alpha: float = 0.5):
        self.bundle = bundle
        self.index = index
        self.thresholds = thresholds
        self.use_classifier = use_classifier
        self.k = k
        self.alpha = alpha
        self.state: Optional[InformationState] = None
        self.query: str = ""
        self.pending_variable: Optional[str] = None
        self.history: list[TurnResult] = []

    def _run(self) -> TurnResult:
        assert self.state is not None
        result = route_turn(self.query, self.state, self.bundle, self.index,
                            self.thresholds, self.k, self.alpha,
                            self.use_classifier)
        self.pending_variable = (result.asked_variable
                                 if result.action is Action.ASK else None)
        self.history.append(result)
        return result

    def start(self, query: str, required_vars: Sequence[str] = (),
              retrieved_entities: Sequence[str] = ()) -> TurnResult:
        self.query = query
        self.state = init_state(query, retrieved_entities, required_vars,
                                ner=self.bundle.ner)
        self.pending_variable = None
        self.history = []
        return self._run()

    def reply(self, user_reply: str) -> TurnResult:
        if self.state is None:
            raise RuntimeError("no active dialogue; call start() first")
        if self.pending_variable is None:
            raise RuntimeError("no clarification pending")
        self.state = update_state(self.state, self.pending_variable, user_reply)
        return self._run()

    @property
    def resolution(self) -> float:
        return resolution_rate(self.state) if self.state else 0.0
