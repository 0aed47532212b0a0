"""Engine configuration: every tunable threshold in one serializable place.

Each field records whether it still holds the shipped default or was
overridden, so experiment logs can show at a glance what was touched.
Secrets (API keys) are never written to disk; they come from environment
variables at load time."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .decision import GateThresholds

ENV_API_KEY = "QAROUTE_API_KEY"

_DEFAULTS = {
    "alpha": 0.5,
    "retrieval_k": 5,
    "rerank_top_m": 5,
    "rerank_pool": 20,
    "tau_conflict": 0.70,
    "tau_conf": 0.35,
    "tau_cov": 0.30,
    "tau_amb": 0.45,
    "tau_i": 0.0,
    "kg_phase2_tau": 0.50,
    "kg_weight_cap": 0.95,
    "kg_reanchor_tau": 0.30,
    "seed": 0,
    "offline": True,
    "chat_base_url": "",
    "chat_model": "",
    "embed_base_url": "",
    "embed_model": "",
    "ner_base_url": "",
    "rerank_base_url": "",
    "rerank_model": "",
}


@dataclass
class EngineConfig:
    alpha: float = 0.5
    retrieval_k: int = 5
    rerank_top_m: int = 5
    rerank_pool: int = 20
    tau_conflict: float = 0.70
    tau_conf: float = 0.35
    tau_cov: float = 0.30
    tau_amb: float = 0.45
    tau_i: float = 0.0
    kg_phase2_tau: float = 0.50
    kg_weight_cap: float = 0.95
    kg_reanchor_tau: float = 0.30
    seed: int = 0
    offline: bool = True
    chat_base_url: str = ""
    chat_model: str = ""
    embed_base_url: str = ""
    embed_model: str = ""
    ner_base_url: str = ""
    rerank_base_url: str = ""
    rerank_model: str = ""
    api_key: str = field(default="", repr=False)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0,1]")
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be >= 1")
        for name in ("tau_conflict", "tau_conf", "tau_cov", "tau_amb", "tau_i",
                     "kg_phase2_tau", "kg_weight_cap", "kg_reanchor_tau"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1]")

    def provenance(self) -> dict[str, str]:
        """Per-field 'default' or 'overridden' tags."""
        out = {}
        for f in fields(self):
            if f.name == "api_key":
                continue
            out[f.name] = ("default"
                           if getattr(self, f.name) == _DEFAULTS[f.name]
                           else "overridden")
        return out

    def gate_thresholds(self) -> GateThresholds:
        return GateThresholds(tau_conflict=self.tau_conflict,
                              tau_conf=self.tau_conf, tau_cov=self.tau_cov,
                              tau_amb=self.tau_amb, tau_i=self.tau_i)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name != "api_key"}
        d["provenance"] = self.provenance()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in known and k != "api_key"}
        cfg = cls(**kwargs)
        cfg.api_key = os.environ.get(ENV_API_KEY, "")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def load_or_default(path: Optional[str]) -> EngineConfig:
    if path:
        return EngineConfig.load(path)
    cfg = EngineConfig()
    cfg.api_key = os.environ.get(ENV_API_KEY, "")
    return cfg
