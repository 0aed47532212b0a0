"""Convert the four source datasets into unified records, balance by action
with dialogue atomicity, and populate variable-state fields via the chat
provider."""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from .core import (Action, ContextDocument, SampleMetadata, SampleState,
                   SOURCES, UnifiedSample)
from .providers import ChatMessage, ChatProvider
from .text import normalize

EXTRACTION_PROMPT_VERSION = "v1"
MAX_KNOWN_VARIABLES = 5
TURN_DEPTH_CAP = 6
CHECKPOINT_EVERY = 50


class ConversionError(ValueError):
    def __init__(self, field_name: str, value: Any):
        super().__init__(f"cannot convert field {field_name!r} with value {value!r}")
        self.field_name = field_name
        self.value = value


@dataclass
class SourceRecord:
    source: str
    raw: dict[str, Any]

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConversionError("source", self.source)


@dataclass
class BalanceTargets:
    answer_frac: float = 1 / 3
    ask_frac: float = 1 / 3
    abstain_frac: float = 1 / 3
    source_minimums: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        total = self.answer_frac + self.ask_frac + self.abstain_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"action fractions must sum to 1, got {total}")
        for f in (self.answer_frac, self.ask_frac, self.abstain_frac):
            if not 0.0 < f < 1.0:
                raise ValueError("fractions must lie in (0,1)")

    def frac(self, action: Action) -> float:
        return {Action.ANSWER: self.answer_frac, Action.ASK: self.ask_frac,
                Action.ABSTAIN: self.abstain_frac}[action]


# ---------------------------------------------------------------------------
# convert
# ---------------------------------------------------------------------------

def _sharc_action(answer: str) -> Action:
    if answer in ("Yes", "No"):
        return Action.ANSWER
    if answer == "Irrelevant":
        return Action.ABSTAIN
    if answer in ("Follow-on", "More"):
        return Action.ASK
    raise ConversionError("answer", answer)


def _docs(record_id: str, texts: Iterable[str]) -> list[ContextDocument]:
    texts = [t for t in texts if t and t.strip()]
    return [ContextDocument(doc_id=f"{record_id}-d{i}", text=t,
                            chunk_idx=0, total_chunks=1)
            for i, t in enumerate(texts)]


def convert(record: SourceRecord) -> UnifiedSample:
    """Map one raw source record onto the unified schema; the raw label is
    preserved losslessly inside ``metadata.source_specific``."""
    raw = record.raw
    source = record.source
    if source == "sharc":
        action = _sharc_action(raw.get("answer"))
        evidence = [e.get("followup_question", e) if isinstance(e, dict) else e
                    for e in raw.get("evidence", [])]
        missing = [normalize(str(e)) for e in evidence if str(e).strip()]
        history = raw.get("history", [])
        sample = UnifiedSample(
            id=str(raw.get("utterance_id", raw.get("id", ""))),
            query=raw["question"],
            context_documents=_docs(str(raw.get("utterance_id", "sharc")),
                                    [raw.get("snippet", ""), raw.get("scenario", "")]),
            state=SampleState(missing_variables=missing),
            action=action,
            response=str(raw.get("answer", "")),
            metadata=SampleMetadata(
                source="sharc",
                multi_turn=bool(history),
                turn_id=len(history) if history else None,
                dialogue_id=str(raw.get("tree_id", raw.get("utterance_id", ""))),
                source_specific={
                    "sharc_answer": raw.get("answer"),
                    "evidence_depth": len(evidence),
                    "history_depth": len(history),
                    "utterance_id": raw.get("utterance_id"),
                },
            ),
        )
    elif source == "quac":
        answer_text = raw.get("answer", "")
        followup = raw.get("followup", "n")
        if followup not in ("y", "n", "m"):
            raise ConversionError("followup", followup)
        if answer_text == "CANNOTANSWER":
            action = Action.ABSTAIN  # unanswerability dominates followup=y
        elif followup == "y":
            action = Action.ASK
        else:
            action = Action.ANSWER
        sample = UnifiedSample(
            id=str(raw.get("id", "")),
            query=raw["question"],
            context_documents=_docs(str(raw.get("id", "quac")),
                                    [raw.get("context", "")]),
            state=SampleState(),
            action=action,
            response=answer_text,
            metadata=SampleMetadata(
                source="quac",
                multi_turn=True,
                turn_id=raw.get("turn_id"),
                dialogue_id=str(raw.get("dialogue_id", "")),
                source_specific={
                    "yesno": raw.get("yesno", "x"),
                    "followup_flag": followup,
                },
            ),
        )
    elif source == "hotpotqa":
        qtype = raw.get("type", "bridge")
        if qtype not in ("bridge", "comparison"):
            raise ConversionError("type", qtype)
        contexts = raw.get("context", [])
        texts = []
        for ctx in contexts:
            if isinstance(ctx, (list, tuple)) and len(ctx) == 2:
                title, sents = ctx
                texts.append(" ".join(sents) if isinstance(sents, list) else str(sents))
            else:
                texts.append(str(ctx))
        sample = UnifiedSample(
            id=str(raw.get("_id", raw.get("id", ""))),
            query=raw["question"],
            context_documents=_docs(str(raw.get("_id", "hotpot")), texts),
            state=SampleState(
                failure_mode="MULTI_HOP_REQUIRED" if qtype == "bridge" else "COMPLETE"),
            action=Action.ANSWER,
            response=str(raw.get("answer", "")),
            metadata=SampleMetadata(
                source="hotpotqa",
                requires_reasoning=True,
                source_specific={
                    "question_type": qtype,
                    "level": raw.get("level", "medium"),
                    "num_supporting_facts": len(raw.get("supporting_facts", [])),
                },
            ),
        )
    else:  # contract_nli
        choice = raw.get("choice")
        if choice in ("Entailment", "Contradiction"):
            action = Action.ANSWER
        elif choice == "NotMentioned":
            action = Action.ABSTAIN
        else:
            raise ConversionError("choice", choice)
        sample = UnifiedSample(
            id=str(raw.get("id", "")),
            query=raw.get("hypothesis", raw.get("question", "")),
            context_documents=_docs(str(raw.get("id", "cnli")),
                                    [raw.get("premise", raw.get("text", ""))]),
            state=SampleState(),
            action=action,
            response=str(choice),
            metadata=SampleMetadata(
                source="contract_nli",
                source_specific={
                    "nli_choice": choice,
                    "label_id": raw.get("label_id", ""),
                    "num_spans": len(raw.get("spans", [])),
                },
            ),
        )
    _assign_failure_mode(sample)
    sample.metadata.num_missing_variables = len(sample.state.missing_variables)
    if sample.action is Action.ANSWER:
        sample.state.missing_variables = []
        sample.metadata.num_missing_variables = 0
    return sample


def _assign_failure_mode(sample: UnifiedSample) -> None:
    if sample.state.failure_mode == "MULTI_HOP_REQUIRED":
        return
    if not sample.state.missing_variables and sample.action is Action.ANSWER:
        sample.state.failure_mode = "COMPLETE"
        sample.state.completeness = "complete"
    else:
        sample.state.failure_mode = "INSUFFICIENT_VARIABLES"
        sample.state.completeness = ("partial" if sample.state.known_variables
                                     else "incomplete")


# ---------------------------------------------------------------------------
# balance
# ---------------------------------------------------------------------------

@dataclass
class BalanceReport:
    target_counts: dict[str, int]
    achieved_counts: dict[str, int]
    shortfalls: dict[str, int]
    source_counts: dict[str, int]
    source_min_shortfalls: dict[str, int]

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def _unit_key(sample: UnifiedSample) -> str:
    if sample.metadata.multi_turn and sample.metadata.dialogue_id:
        return f"d:{sample.metadata.dialogue_id}"
    return f"s:{sample.id}"


def balance(samples: Sequence[UnifiedSample], targets: BalanceTargets,
            seed: int, turn_cap: int = TURN_DEPTH_CAP
            ) -> tuple[list[UnifiedSample], BalanceReport]:
    """Best-effort action balancing. Dialogues are atomic sampling units; turn
    depth is capped per dialogue; output is deterministic for a fixed seed and
    invariant under input permutation."""
    units: dict[str, list[UnifiedSample]] = {}
    for s in samples:
        units.setdefault(_unit_key(s), []).append(s)
    for key, turns in units.items():
        turns.sort(key=lambda s: (s.metadata.turn_id or 0, s.id))
        if len(turns) > turn_cap:
            units[key] = turns[:turn_cap]

    n_pool = sum(len(t) for t in units.values())
    supply = {a: 0 for a in Action}
    for turns in units.values():
        for s in turns:
            supply[s.action] += 1
    target_counts = {a: min(supply[a], round(targets.frac(a) * n_pool))
                     for a in Action}

    order = sorted(units)
    random.Random(seed).shuffle(order)

    selected: dict[str, list[UnifiedSample]] = {}
    counts = {a: 0 for a in Action}
    source_counts: dict[str, int] = {s: 0 for s in SOURCES}

    def fits(turns: list[UnifiedSample]) -> bool:
        add = {a: 0 for a in Action}
        for s in turns:
            add[s.action] += 1
        return all(counts[a] + add[a] <= target_counts[a] for a in Action)

    def take(key: str) -> None:
        turns = units[key]
        selected[key] = turns
        for s in turns:
            counts[s.action] += 1
            source_counts[s.metadata.source] = source_counts.get(s.metadata.source, 0) + 1

    # pass 1: source minimums
    for source, minimum in targets.source_minimums.items():
        for key in order:
            if source_counts.get(source, 0) >= minimum:
                break
            if key in selected:
                continue
            turns = units[key]
            if turns[0].metadata.source == source and fits(turns):
                take(key)
    # pass 2: global fill
    for key in order:
        if key not in selected and fits(units[key]):
            take(key)

    out: list[UnifiedSample] = []
    for key in sorted(selected):
        out.extend(selected[key])
    report = BalanceReport(
        target_counts={a.value: target_counts[a] for a in Action},
        achieved_counts={a.value: counts[a] for a in Action},
        shortfalls={a.value: max(0, round(targets.frac(a) * n_pool) - counts[a])
                    for a in Action},
        source_counts=source_counts,
        source_min_shortfalls={
            s: max(0, m - source_counts.get(s, 0))
            for s, m in targets.source_minimums.items()},
    )
    return out, report


# ---------------------------------------------------------------------------
# populate_variables
# ---------------------------------------------------------------------------

EXTRACTION_PROMPT = """Identify the variable state of this question-answering sample.

Query: {query}
Gold action: {action}

Instructions:
- known_variables: concrete entities or attributes explicitly present in the query (max 5)
- missing_variables: information required to resolve the query but absent
- If the gold action is ANSWER, missing_variables must be an empty list.

Respond with a single JSON object:
{{"known_variables": [...], "missing_variables": [...]}}"""


def populate_variables(sample: UnifiedSample, chat: ChatProvider) -> UnifiedSample:
    """Fill known/missing variables via the chat provider. ShARC evidence-chain
    variables pass through untouched; the ANSWER => no-missing-variables
    constraint is enforced post-hoc regardless of model output."""
    if sample.metadata.source == "sharc" and sample.state.missing_variables:
        sample.metadata.num_missing_variables = len(sample.state.missing_variables)
        return sample
    prompt = EXTRACTION_PROMPT.format(query=sample.query,
                                      action=sample.action.value)
    try:
        out = chat.chat([ChatMessage("user", prompt)])
        match = re.search(r"\{.*\}", out, re.DOTALL)
        parsed = json.loads(match.group(0)) if match else None
        known = [normalize(str(v)) for v in parsed["known_variables"]]
        missing = [normalize(str(v)) for v in parsed["missing_variables"]]
    except Exception:
        sample.metadata.source_specific["needs_review"] = True
        return sample
    sample.state.known_variables = [v for v in known if v][:MAX_KNOWN_VARIABLES]
    sample.state.missing_variables = [v for v in missing if v]
    if sample.action is Action.ANSWER:
        sample.state.missing_variables = []
    sample.metadata.num_missing_variables = len(sample.state.missing_variables)
    sample.metadata.source_specific["extraction_prompt_version"] = \
        EXTRACTION_PROMPT_VERSION
    _assign_failure_mode(sample)
    return sample


def populate_file(in_path: str | Path, out_path: str | Path,
                  chat: ChatProvider, resume: bool = False,
                  checkpoint_every: int = CHECKPOINT_EVERY) -> int:
    """Populate a JSONL file of samples with crash recovery: output is flushed
    every ``checkpoint_every`` samples and --resume skips already-done ids."""
    out_path = Path(out_path)
    done: set[str] = set()
    if resume and out_path.exists():
        for line in out_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                done.add(json.loads(line)["id"])
    mode = "a" if (resume and out_path.exists()) else "w"
    written = 0
    with open(in_path, encoding="utf-8") as fin, open(out_path, mode,
                                                      encoding="utf-8") as fout:
        for i, line in enumerate(ln for ln in fin if ln.strip()):
            sample = UnifiedSample.from_json(line)
            if sample.id in done:
                continue
            sample = populate_variables(sample, chat)
            fout.write(sample.to_json() + "\n")
            written += 1
            if written % checkpoint_every == 0:
                fout.flush()
    return written


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def validate(line: str) -> tuple[Optional[UnifiedSample], list[str]]:
    """Validate one serialized record. Returns (sample, errors); errors carry
    JSON-path-style locators."""
    errors: list[str] = []
    try:
        d = json.loads(line)
    except json.JSONDecodeError as e:
        return None, [f"$: not valid JSON ({e.msg})"]
    for path_, key in (("$.id", "id"), ("$.query", "query"),
                       ("$.state", "state"), ("$.action", "action"),
                       ("$.metadata", "metadata")):
        if key not in d:
            errors.append(f"{path_}: missing required field")
    if errors:
        return None, errors
    if d["action"] not in (a.value for a in Action):
        errors.append(f"$.action: unknown action {d['action']!r}")
    st = d.get("state", {})
    if st.get("failure_mode") not in ("COMPLETE", "INSUFFICIENT_VARIABLES",
                                      "MULTI_HOP_REQUIRED"):
        errors.append(f"$.state.failure_mode: unknown value {st.get('failure_mode')!r}")
    md = d.get("metadata", {})
    if md.get("source") not in SOURCES:
        errors.append(f"$.metadata.source: unknown source {md.get('source')!r}")
    missing = st.get("missing_variables", [])
    if d.get("action") == "ANSWER" and missing:
        errors.append("$.state.missing_variables: must be empty when action=ANSWER")
    if st.get("failure_mode") == "COMPLETE" and missing:
        errors.append("$.state.missing_variables: must be empty when failure_mode=COMPLETE")
    if md.get("num_missing_variables") is not None and \
            md.get("num_missing_variables") != len(missing):
        errors.append("$.metadata.num_missing_variables: "
                      f"expected {len(missing)}, got {md.get('num_missing_variables')}")
    if errors:
        return None, errors
    try:
        return UnifiedSample.from_dict(d), []
    except Exception as e:
        return None, [f"$: {e}"]


def read_jsonl(path: str | Path) -> list[UnifiedSample]:
    return [UnifiedSample.from_json(ln)
            for ln in Path(path).read_text(encoding="utf-8").splitlines()
            if ln.strip()]


def write_jsonl(samples: Iterable[UnifiedSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(s.to_json() + "\n")
