"""Action-level evaluation: 3x3 confusion matrix, per-action precision /
recall / F1, macro aggregates, hallucination rate among issued answers, and
answer coverage. Emits a JSON report plus an aligned plain-text table."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Action

ACTIONS = (Action.ANSWER, Action.ASK, Action.ABSTAIN)


@dataclass
class ConfusionMatrix:
    """Gold actions on rows, predicted on columns, in ANSWER/ASK/ABSTAIN
    order."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 3), dtype=np.int64))

    def add(self, gold: Action, predicted: Action) -> None:
        self.counts[ACTIONS.index(gold), ACTIONS.index(predicted)] += 1

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[Action, Action]]) -> "ConfusionMatrix":
        m = cls()
        for g, p in pairs:
            m.add(g, p)
        return m

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def precision(self, action: Action) -> float:
        j = ACTIONS.index(action)
        denom = int(self.counts[:, j].sum())
        return int(self.counts[j, j]) / denom if denom else 0.0

    def recall(self, action: Action) -> float:
        i = ACTIONS.index(action)
        denom = int(self.counts[i, :].sum())
        return int(self.counts[i, i]) / denom if denom else 0.0

    def f1(self, action: Action) -> float:
        p, r = self.precision(action), self.recall(action)
        return 2 * p * r / (p + r) if (p + r) else 0.0

    def macro_f1(self) -> float:
        return sum(self.f1(a) for a in ACTIONS) / len(ACTIONS)

    def to_dict(self) -> dict:
        return {"labels": [a.value for a in ACTIONS],
                "rows_gold_cols_predicted": self.counts.tolist()}


def hallucination_rate(predicted: Sequence[Action],
                       answer_correct: Sequence[Optional[bool]]
                       ) -> tuple[float, bool]:
    """Fraction of issued answers judged incorrect. Returns (rate, undefined):
    with no predicted ANSWER the rate is 0.0 and flagged undefined."""
    if len(predicted) != len(answer_correct):
        raise ValueError("length mismatch")
    answered = [c for p, c in zip(predicted, answer_correct)
                if p is Action.ANSWER]
    if not answered:
        return 0.0, True
    bad = sum(1 for c in answered if c is False or c is None)
    return bad / len(answered), False


def coverage_fraction(predicted: Sequence[Action]) -> float:
    """Fraction of queries the system chose to answer outright."""
    if not predicted:
        return 0.0
    return sum(1 for p in predicted if p is Action.ANSWER) / len(predicted)


@dataclass
class EvalReport:
    matrix: ConfusionMatrix
    hallucination: float = 0.0
    hallucination_undefined: bool = True
    coverage: float = 0.0

    @classmethod
    def build(cls, gold: Sequence[Action], predicted: Sequence[Action],
              answer_correct: Optional[Sequence[Optional[bool]]] = None
              ) -> "EvalReport":
        if len(gold) != len(predicted):
            raise ValueError("gold/predicted length mismatch")
        matrix = ConfusionMatrix.from_pairs(list(zip(gold, predicted)))
        if answer_correct is None:
            answer_correct = [None] * len(predicted)
        h, undef = hallucination_rate(predicted, answer_correct)
        return cls(matrix=matrix, hallucination=h,
                   hallucination_undefined=undef,
                   coverage=coverage_fraction(predicted))

    def to_dict(self) -> dict:
        per_action = {
            a.value: {"precision": self.matrix.precision(a),
                      "recall": self.matrix.recall(a),
                      "f1": self.matrix.f1(a)}
            for a in ACTIONS
        }
        return {
            "confusion_matrix": self.matrix.to_dict(),
            "accuracy": self.matrix.accuracy(),
            "per_action": per_action,
            "macro_f1": self.matrix.macro_f1(),
            "hallucination_rate": (None if self.hallucination_undefined
                                   else self.hallucination),
            "coverage_fraction": self.coverage,
            "total": self.matrix.total,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        """Aligned plain-text summary table."""
        rows = [("Metric", "ANSWER", "ASK", "ABSTAIN")]
        for name, fn in (("Precision", self.matrix.precision),
                         ("Recall", self.matrix.recall),
                         ("F1", self.matrix.f1)):
            rows.append((name,) + tuple(f"{fn(a):.4f}" for a in ACTIONS))
        lines = []
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        lines.append("")
        lines.append(f"Accuracy            {self.matrix.accuracy():.4f}")
        lines.append(f"Macro F1            {self.matrix.macro_f1():.4f}")
        h = "n/a" if self.hallucination_undefined else f"{self.hallucination:.4f}"
        lines.append(f"Hallucination rate  {h}")
        lines.append(f"Coverage            {self.coverage:.4f}")
        lines.append(f"Samples             {self.matrix.total}")
        return "\n".join(lines)
