"""Planner-finetuning dataset generation: graph-context extraction, structured
prompt rendering, quality filtering, clarification-question building,
dialogue-level splits, and chat-template serialization.

Rendering is fully deterministic: reasoning chains are template-filled from
actual graph evidence and variable states, never from a generative model."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Action, UnifiedSample
from .kg import REQUIRES_RELATION, KnowledgeGraph, sample_chunk_ids, triple_sentence
from .providers import EmbeddingProvider
from .text import STOPWORDS, normalize, tokenize

NODE_MATCH_TAU = 0.55
NODE_MATCH_TOP = 5
KNOWN_VAR_TOP = 2
TRIPLE_RELEVANCE_TAU = 0.35
MAX_TRIPLES = 12
ANCHOR_TAU = 0.20
GENERIC_TAU = 0.45
HISTORY_CAP = 6  # most recent turns rendered

GENERIC_ANCHOR_PHRASES = [
    "more information",
    "additional details",
    "the context",
    "relevant data",
    "further information",
    "more details",
    "the answer",
    "general information",
]

PLANNER_SYSTEM_PROMPT = """You are a decision planner for a question-answering system.

Your task: given a user query, search the knowledge graph for relevant
nodes, evaluate what information is present and what is missing, then
decide the correct action.

Decision logic:
- Search the graph for nodes matching the query subject and known variables
- If the graph contains a complete path connecting known entities → ANSWER
- If the graph contains the topic but key linking variables are missing
  → ASK (specify what is missing)
- If the graph has no relevant nodes or the topic is absent → ABSTAIN

You will receive:
  <query>               — the user's question
  <known_variables>     — entities explicitly present in the query
  <graph_context>       — KG triples: subject | relation | object
  <missing_variables>   — variables required but not present
  <conversation_history>— prior turns (multi-turn queries only)

Output format (strictly follow this):
<reasoning>
Step 1 — Query subject: identify what the query is asking about
Step 2 — Graph search: what nodes were found, what connections exist
Step 3 — Variable check: what is known, what is missing
Step 4 — Decision rationale: why this action is correct
</reasoning>
<decision>
ANSWER | ASK | ABSTAIN
</decision>
<justification>
One sentence grounded in the graph evidence.
</justification>

Rules:
- Reasoning must reference actual graph content, not generic statements
- Never say "unspecified variables" — name the specific missing variable
- If graph_context is empty, default to ABSTAIN unless context is clearly
  partial (then ASK)
- Do not use prior world knowledge — only the graph context provided"""


@dataclass
class ContextTriple:
    subject: str
    relation: str
    object: str
    weight: float

    def render(self) -> str:
        return f"{self.subject} | {self.relation} | {self.object}"


@dataclass
class GraphContext:
    matched_nodes: list[tuple[str, float]] = field(default_factory=list)
    triples: list[ContextTriple] = field(default_factory=list)
    includes_requires: bool = False

    @property
    def empty(self) -> bool:
        return not self.matched_nodes and not self.triples

    def rendered_lines(self) -> list[str]:
        return [t.render() for t in self.triples]


def extract_context(sample: UnifiedSample, graph: KnowledgeGraph,
                    embedder: EmbeddingProvider) -> GraphContext:
    """Seed-node matching (query and known variables against node names), 2-hop
    ego graph, weight-ranked triples with a query-relevance check. ASK samples
    additionally carry ``requires`` triples adjacent to seed nodes, aliased as
    ``?unknown_N``; ANSWER samples have every requires triple stripped."""
    entity_ids = sorted(n for n, nd in graph.nodes.items() if nd.kind == "entity")
    if not entity_ids:
        return GraphContext()
    name_vecs = embedder.embed([graph.nodes[n].name for n in entity_ids])
    qv = embedder.embed([sample.query])[0]
    sims = [(float(np.dot(qv, v)), n) for n, v in zip(entity_ids, name_vecs)]
    matched = sorted(((s, n) for s, n in sims if s >= NODE_MATCH_TAU),
                     key=lambda p: (-p[0], p[1]))[:NODE_MATCH_TOP]
    seeds = {n for _, n in matched}
    matched_nodes = [(n, s) for s, n in matched]
    for var in sample.state.known_variables:
        vv = embedder.embed([var])[0]
        var_sims = sorted(((float(np.dot(vv, v)), n)
                           for n, v in zip(entity_ids, name_vecs)),
                          key=lambda p: (-p[0], p[1]))
        for s, n in var_sims[:KNOWN_VAR_TOP]:
            if s >= NODE_MATCH_TAU and n not in seeds:
                seeds.add(n)
                matched_nodes.append((n, s))
    if not seeds:
        return GraphContext()

    adj = graph.adjacency()
    ego = set(seeds)
    frontier = set(seeds)
    for _ in range(2):
        nxt = set()
        for n in frontier:
            for nbr, _e in adj.get(n, []):
                if nbr not in ego:
                    nxt.add(nbr)
        ego |= nxt
        frontier = nxt

    candidates = [e for e in graph.edges.values()
                  if e.relation != REQUIRES_RELATION
                  and e.subject in ego and e.object in ego]
    relevant = []
    for e in sorted(candidates, key=lambda e: (-e.weight, e.key)):
        sent_vec = embedder.embed([triple_sentence(graph, e)])[0]
        if float(np.dot(sent_vec, qv)) >= TRIPLE_RELEVANCE_TAU:
            relevant.append(ContextTriple(e.subject, e.relation, e.object,
                                          e.weight))
        if len(relevant) == MAX_TRIPLES:
            break

    includes_requires = False
    if sample.action is Action.ASK:
        n_alias = 0
        for e in sorted(graph.edges.values(), key=lambda e: e.key):
            if e.relation == REQUIRES_RELATION and e.subject in seeds:
                n_alias += 1
                relevant.append(ContextTriple(e.subject, REQUIRES_RELATION,
                                              f"?unknown_{n_alias}", e.weight))
                includes_requires = True
    relevant.sort(key=lambda t: (-t.weight, t.subject, t.relation, t.object))
    return GraphContext(matched_nodes=matched_nodes, triples=relevant,
                        includes_requires=includes_requires)


def query_head_noun(query: str) -> str:
    for tok in tokenize(query):
        if tok not in STOPWORDS:
            return tok
    return normalize(query) or "this topic"


def build_question(missing: str, known: Sequence[str],
                   embedder: EmbeddingProvider, query: str = "") -> str:
    """Anchor-based clarification question. The anchor is the known variable
    most similar to the missing one (threshold 0.20); with no anchor above
    threshold the query head noun is used. Always ends with '?'."""
    if not missing.strip():
        raise ValueError("missing variable must be non-empty")
    anchor = None
    known = [k for k in known if k.strip()]
    if known:
        mv = embedder.embed([missing])[0]
        kvs = embedder.embed(list(known))
        sims = [float(np.dot(mv, v)) for v in kvs]
        best = int(np.argmax(sims))
        if sims[best] >= ANCHOR_TAU:
            anchor = known[best]
    if anchor is None:
        anchor = query_head_noun(query) if query else (known[0] if known else "this topic")
    return f"Regarding {anchor}: could you specify {missing}?"


@dataclass
class HistoryEntry:
    turn: int
    action: Action
    query: str
    resolved_variable: Optional[str] = None


@dataclass
class FinetuneSample:
    system: str
    user: str
    assistant: str
    action: Action
    dialogue_id: Optional[str] = None
    sample_id: str = ""
    split: Optional[str] = None


def _join(values: Sequence[str]) -> str:
    return ", ".join(values)


def _render_history(history: Sequence[HistoryEntry]) -> str:
    lines = []
    for h in history:
        line = f"Turn {h.turn} | {h.action.value} | Q: \"{h.query}\""
        if h.action is Action.ASK and h.resolved_variable:
            line += (f"\n        | A: [Clarification requested: "
                     f"'{h.resolved_variable}' is needed]"
                     f"\n        → resolved: '{h.resolved_variable}'")
        lines.append(line)
    return "\n".join(lines)


def render_user_block(sample: UnifiedSample, context: GraphContext,
                      history: Sequence[HistoryEntry] = (),
                      resolved: Sequence[str] = ()) -> str:
    parts = []
    history = list(history)[-HISTORY_CAP:]
    if history:
        parts.append(f"<conversation_history>\n{_render_history(history)}\n"
                     f"</conversation_history>")
        if resolved:
            parts.append(f"<resolved_variables> {_join(list(resolved))} </resolved_variables>")
        if sample.state.missing_variables:
            parts.append(f"<remaining_unknowns> "
                         f"{_join(sample.state.missing_variables)} </remaining_unknowns>")
    parts.append(f"<query> {sample.query} </query>")
    parts.append(f"<known_variables> {_join(sample.state.known_variables)} </known_variables>")
    if context.triples:
        body = "\n".join(f"  {line}" for line in context.rendered_lines())
        parts.append(f"<graph_context>\n{body}\n</graph_context>")
    else:
        parts.append("<graph_context>\n  [no relevant nodes found in knowledge graph]\n"
                     "</graph_context>")
    parts.append(f"<missing_variables> {_join(sample.state.missing_variables)} </missing_variables>")
    return "\n".join(parts)


def _reasoning_steps(sample: UnifiedSample, context: GraphContext) -> list[str]:
    known = _join(sample.state.known_variables) or "none identified"
    missing = _join(sample.state.missing_variables)
    step1 = (f"Step 1 — Query subject: {known}. "
             f"Query asks: '{sample.query}'")
    if context.empty:
        step2 = "Step 2 — Graph search: no relevant nodes found in knowledge graph."
    else:
        node_names = _join([f"'{n}'" for n, _ in context.matched_nodes]) or "none"
        relations = []
        for t in context.triples:
            if t.relation not in relations:
                relations.append(t.relation)
        step2 = (f"Step 2 — Graph search: matched KG nodes: {node_names}. "
                 f"Relations seen: {_join(relations) or 'none'}.")
        if context.includes_requires:
            step2 += (" Variable placeholder nodes indicate missing information; "
                      "path cannot be completed.")
    if sample.action is Action.ANSWER:
        step3 = (f"Step 3 — Variable check: Known: {known}. "
                 f"Nothing required is missing. Failure mode: COMPLETE.")
        step4 = ("Step 4 — Decision rationale: graph evidence connects the "
                 "known entities; the reasoning path is complete.")
    elif sample.action is Action.ASK:
        step3 = (f"Step 3 — Variable check: Known: {known}. "
                 f"Required but absent from graph: '{missing}'. "
                 f"Failure mode: {sample.state.failure_mode}.")
        step4 = ("Step 4 — Decision rationale: graph has partial connections "
                 f"but cannot complete the reasoning path without: '{missing}'.")
    else:
        step3 = (f"Step 3 — Variable check: Known: {known}. "
                 f"Required information is absent and not recoverable. "
                 f"Failure mode: {sample.state.failure_mode}.")
        step4 = ("Step 4 — Decision rationale: graph has no resolvable path — "
                 "the query topic is absent from the knowledge base.")
    return [step1, step2, step3, step4]


def render(sample: UnifiedSample, context: GraphContext,
           embedder: EmbeddingProvider,
           history: Sequence[HistoryEntry] = (),
           resolved: Sequence[str] = ()) -> FinetuneSample:
    """Render one training sample: system prompt, tagged user block, and the
    template-filled four-step assistant turn."""
    user = render_user_block(sample, context, history, resolved)
    steps = "\n".join(_reasoning_steps(sample, context))
    if sample.action is Action.ASK:
        missing = (sample.state.missing_variables[0]
                   if sample.state.missing_variables else "the missing detail")
        question = build_question(missing, sample.state.known_variables,
                                  embedder, query=sample.query)
        justification = question
        tail = (f"\n<clarification_question>\n{question}\n"
                f"</clarification_question>")
    elif sample.action is Action.ANSWER:
        if context.triples:
            justification = ("The graph contains a complete path supporting an "
                            f"answer: {context.triples[0].render()}.")
        else:
            justification = "The known variables fully specify the query."
        tail = ""
    else:
        topic = query_head_noun(sample.query)
        justification = (f"Graph has no resolvable path — '{topic}' is "
                         "entirely absent from the knowledge base.")
        tail = ""
    assistant = (f"<reasoning>\n{steps}\n</reasoning>\n"
                 f"<decision> {sample.action.value} </decision>\n"
                 f"<justification>\n{justification}\n</justification>{tail}")
    return FinetuneSample(system=PLANNER_SYSTEM_PROMPT, user=user,
                          assistant=assistant, action=sample.action,
                          dialogue_id=sample.metadata.dialogue_id,
                          sample_id=sample.id)


# ---------------------------------------------------------------------------
# quality filter
# ---------------------------------------------------------------------------

ACCEPT = "accept"


def quality_filter(candidate: FinetuneSample, context: GraphContext,
                   sample: UnifiedSample,
                   embedder: EmbeddingProvider) -> str:
    """Returns ``"accept"`` or a rejection reason string."""
    from .agents import parse_planner_output  # local import to avoid a cycle

    if not candidate.assistant.strip():
        return "empty_response"
    _, errors = parse_planner_output(candidate.assistant)
    if errors:
        return "malformed_tags"
    if candidate.action is Action.ANSWER:
        if context.empty or not context.triples:
            return "answer_empty_graph"
        known = [normalize(v) for v in sample.state.known_variables]
        grounded = False
        for t in context.triples:
            for k in known:
                if k and (k in t.subject or t.subject in k
                          or k in t.object or t.object in k):
                    grounded = True
        if known and not grounded:
            return "answer_graph_irrelevant"
    if candidate.action is Action.ASK:
        if not sample.state.missing_variables and not context.includes_requires:
            return "ask_no_missing_no_var_nodes"
    if sample.state.missing_variables:
        anchors = embedder.embed(GENERIC_ANCHOR_PHRASES)
        for mv in sample.state.missing_variables:
            v = embedder.embed([mv])[0]
            if max(float(np.dot(v, a)) for a in anchors) > GENERIC_TAU:
                return "generic_missing_variable"
    return ACCEPT


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def split(samples: Sequence[FinetuneSample],
          fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> dict[str, str]:
    """Assign train/val/test at dialogue granularity; returns a dialogue-key to
    split-name map and stamps each sample's ``split`` field."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    keys = sorted({s.dialogue_id or f"s:{s.sample_id}" for s in samples})
    random.Random(seed).shuffle(keys)
    n = len(keys)
    n_train = round(fractions[0] * n)
    n_val = round(fractions[1] * n)
    assignment = {}
    for i, k in enumerate(keys):
        if i < n_train:
            assignment[k] = "train"
        elif i < n_train + n_val:
            assignment[k] = "val"
        else:
            assignment[k] = "test"
    for s in samples:
        s.split = assignment[s.dialogue_id or f"s:{s.sample_id}"]
    return assignment


def contamination(samples: Sequence[FinetuneSample]) -> int:
    """Number of dialogues spanning more than one split (must be zero)."""
    seen: dict[str, set[str]] = {}
    for s in samples:
        key = s.dialogue_id or f"s:{s.sample_id}"
        seen.setdefault(key, set()).add(s.split or "")
    return sum(1 for splits in seen.values() if len(splits) > 1)


# ---------------------------------------------------------------------------
# chat-template serialization
# ---------------------------------------------------------------------------

def to_chat_template(sample: FinetuneSample) -> dict:
    """Instruction-wrapped serialization; ``prompt_length_chars`` lets a
    trainer mask the prompt span so loss lands only on the assistant turn."""
    prompt = f"<s>[INST] {sample.system} {sample.user} [/INST] "
    return {"text": prompt + f"{sample.assistant}</s>",
            "prompt_length_chars": len(prompt)}


def from_chat_template(text: str,
                       system: str = PLANNER_SYSTEM_PROMPT) -> tuple[str, str, str]:
    """Inverse of :func:`to_chat_template` for a known system prompt."""
    if not (text.startswith("<s>[INST] ") and text.endswith("</s>")):
        raise ValueError("not a chat-template string")
    inner = text[len("<s>[INST] "):-len("</s>")]
    prompt, sep, assistant = inner.partition(" [/INST] ")
    if not sep:
        raise ValueError("missing [/INST] separator")
    if not prompt.startswith(system + " "):
        raise ValueError("system prompt mismatch")
    return system, prompt[len(system) + 1:], assistant


# ---------------------------------------------------------------------------
# end-to-end build
# ---------------------------------------------------------------------------

@dataclass
class BuildReport:
    accepted: int = 0
    rejected_by_reason: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"accepted": self.accepted,
                "rejected_by_reason": dict(sorted(self.rejected_by_reason.items()))}


def history_for(prior: Sequence[UnifiedSample]) -> tuple[list[HistoryEntry], list[str]]:
    """History entries plus the accumulated resolved-variable set for the prior
    turns of a dialogue."""
    entries, resolved = [], []
    for i, p in enumerate(prior, start=1):
        res = None
        if p.action is Action.ASK and p.state.missing_variables:
            res = p.state.missing_variables[0]
            if res not in resolved:
                resolved.append(res)
        entries.append(HistoryEntry(turn=i, action=p.action, query=p.query,
                                    resolved_variable=res))
    return entries, resolved


def build(samples: Sequence[UnifiedSample], graph: KnowledgeGraph,
          embedder: EmbeddingProvider, seed: int = 0,
          fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
          ) -> tuple[list[FinetuneSample], BuildReport]:
    """Full dataset build: per-sample context extraction and rendering with
    multi-turn state accumulation, quality filtering, then dialogue splits."""
    by_dialogue: dict[str, list[UnifiedSample]] = {}
    for s in samples:
        key = s.metadata.dialogue_id or f"s:{s.id}"
        by_dialogue.setdefault(key, []).append(s)
    report = BuildReport()
    out: list[FinetuneSample] = []
    for key in sorted(by_dialogue):
        turns = sorted(by_dialogue[key], key=lambda s: (s.metadata.turn_id or 0, s.id))
        merged_known: list[str] = []
        for i, sample in enumerate(turns):
            for v in sample.state.known_variables:
                if v not in merged_known:
                    merged_known.append(v)
            sample.state.known_variables = list(merged_known)
            history, resolved = history_for(turns[:i])
            context = extract_context(sample, graph, embedder)
            candidate = render(sample, context, embedder, history, resolved)
            verdict = quality_filter(candidate, context, sample, embedder)
            if verdict == ACCEPT:
                out.append(candidate)
                report.accepted += 1
            else:
                report.rejected_by_reason[verdict] = \
                    report.rejected_by_reason.get(verdict, 0) + 1
    split(out, fractions, seed)
    return out, report


def write_outputs(samples: Sequence[FinetuneSample], report: BuildReport,
                  out_dir: str | Path) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "chat_format.jsonl", "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps({
                "messages": [
                    {"role": "system", "content": s.system},
                    {"role": "user", "content": s.user},
                    {"role": "assistant", "content": s.assistant},
                ],
                "action": s.action.value,
                "dialogue_id": s.dialogue_id,
                "split": s.split,
            }, ensure_ascii=False) + "\n")
    with open(d / "template_format.jsonl", "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(to_chat_template(s), ensure_ascii=False) + "\n")
    (d / "filter_report.json").write_text(
        json.dumps(report.to_dict(), indent=2), encoding="utf-8")
