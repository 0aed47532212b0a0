"""Model providers: chat completion, sentence embedding, NER, and cross-encoder
reranking. Each capability has a remote HTTP client (OpenAI-compatible where a
standard exists) and a deterministic offline implementation used in tests and
``--offline`` runs."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import httpx
import numpy as np

from .text import PRONOUNS, STOPWORDS, normalize

EMBED_DIM = 384

NER_CATEGORIES = ("Person", "Organisation", "Location", "Attribute", "Work",
                  "Concept", "Event")


class ProviderError(RuntimeError):
    """Non-retryable provider failure (bad config, non-2xx, bad payload)."""

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class RetryableProviderError(ProviderError):
    """Transport failure or 5xx; safe to retry."""


@dataclass(frozen=True)
class NamedEntity:
    text: str
    category: str
    start: int
    end: int


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role: {self.role}")
        if not self.content:
            raise ValueError("message content must be non-empty")


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_tokens: int = 512
    greedy: bool = True


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class ChatProvider(Protocol):
    def chat(self, messages: Sequence[ChatMessage],
             decoding: Decoding = Decoding()) -> str: ...


class NerProvider(Protocol):
    def ner(self, text: str) -> list[NamedEntity]: ...


class RerankProvider(Protocol):
    def rerank(self, query: str, chunks: Sequence[str]) -> list[float]: ...


def _check_texts(texts: Sequence[str]) -> None:
    if not texts:
        raise ValueError("texts must be non-empty")
    for t in texts:
        if not t:
            raise ValueError("each text must be non-empty")


def entity_candidate_ok(surface: str) -> bool:
    """Hard validator for graph-node candidates: no pronouns, stopwords, pure
    numerics, or strings under 3 characters."""
    s = normalize(surface)
    if len(s) < 3:
        return False
    if s in PRONOUNS or s in STOPWORDS:
        return False
    if s.replace(" ", "").isdigit():
        return False
    return True


# ---------------------------------------------------------------------------
# Offline providers
# ---------------------------------------------------------------------------

class HashingEmbedder:
    """Deterministic bag-of-tokens embedder: each whitespace token hashes to a
    coordinate, vectors are summed and L2-normalized. Shared tokens raise cosine
    similarity, which is all the offline geometry the pipeline needs."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def _token_vec(self, token: str) -> np.ndarray:
        h = hashlib.sha256(token.encode("utf-8")).digest()
        idx = int.from_bytes(h[:4], "little") % self.dim
        sign = 1.0 if h[4] % 2 == 0 else -1.0
        v = np.zeros(self.dim, dtype=np.float32)
        v[idx] = sign
        return v

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        out = []
        for t in texts:
            tokens = normalize(t).split()
            v = np.zeros(self.dim, dtype=np.float32)
            for tok in tokens:
                v += self._token_vec(tok)
            n = float(np.linalg.norm(v))
            if n == 0.0:
                # degenerate input (e.g. articles only): fall back to whole-string hash
                v = self._token_vec(t)
                n = float(np.linalg.norm(v))
            out.append(v / n)
        return out


class LexiconNer:
    """Offline NER: longest-match lookup against a surface→category lexicon.

    Lexicon file format: one ``surface<TAB>category`` per line.
    """

    def __init__(self, lexicon: dict[str, str]):
        self.lexicon = {}
        for surface, cat in lexicon.items():
            if cat not in NER_CATEGORIES:
                raise ValueError(f"unknown NER category: {cat}")
            self.lexicon[surface.lower()] = cat
        # longest surfaces first so overlapping mentions resolve to the longest
        self._surfaces = sorted(self.lexicon, key=len, reverse=True)

    @classmethod
    def from_file(cls, path: str | Path) -> "LexiconNer":
        lex: dict[str, str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            surface, _, cat = line.partition("\t")
            lex[surface] = cat.strip()
        return cls(lex)

    def ner(self, text: str) -> list[NamedEntity]:
        low = text.lower()
        taken = [False] * len(text)
        found: list[NamedEntity] = []
        for surface in self._surfaces:
            if not entity_candidate_ok(surface):
                continue
            start = 0
            while True:
                i = low.find(surface, start)
                if i < 0:
                    break
                j = i + len(surface)
                boundary_ok = (i == 0 or not low[i - 1].isalnum()) and \
                              (j == len(low) or not low[j].isalnum())
                if boundary_ok and not any(taken[i:j]):
                    for k in range(i, j):
                        taken[k] = True
                    found.append(NamedEntity(text=text[i:j],
                                             category=self.lexicon[surface],
                                             start=i, end=j))
                start = i + 1
        found.sort(key=lambda e: e.start)
        return found


SCRIPTED_FALLBACK = "[no scripted completion for this prompt]"


def prompt_digest(messages: Sequence[ChatMessage]) -> str:
    payload = "\n".join(f"{m.role}:{m.content}" for m in messages)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ScriptedChat:
    """Offline chat provider: completions are fixtures keyed by a digest of the
    rendered prompt; unknown prompts get a designated fallback string.

    Fixture file format: JSONL of ``{"prompt_digest": ..., "completion": ...}``.
    """

    def __init__(self, fixtures: Optional[dict[str, str]] = None,
                 fallback: str = SCRIPTED_FALLBACK):
        self.fixtures = dict(fixtures or {})
        self.fallback = fallback
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path, fallback: str = SCRIPTED_FALLBACK) -> "ScriptedChat":
        fx: dict[str, str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                fx[rec["prompt_digest"]] = rec["completion"]
        return cls(fx, fallback)

    def script(self, messages: Sequence[ChatMessage], completion: str) -> None:
        self.fixtures[prompt_digest(messages)] = completion

    def chat(self, messages: Sequence[ChatMessage],
             decoding: Decoding = Decoding()) -> str:
        _validate_roles(messages)
        self.calls += 1
        return self.fixtures.get(prompt_digest(messages), self.fallback)


class OverlapReranker:
    """Offline reranker scoring by normalized term overlap (Jaccard over
    non-stopword terms), which lands in [0,1] like a sigmoid-normalized logit."""

    def rerank(self, query: str, chunks: Sequence[str]) -> list[float]:
        if not chunks:
            raise ValueError("chunks must be non-empty")
        q = {t for t in normalize(query).split() if t not in STOPWORDS}
        scores = []
        for c in chunks:
            ct = {t for t in normalize(c).split() if t not in STOPWORDS}
            union = q | ct
            scores.append(len(q & ct) / len(union) if union else 0.0)
        return scores


def _validate_roles(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[0].role not in ("system", "user"):
        raise ValueError("first message must be system or user")
    for prev, cur in zip(messages, messages[1:]):
        if prev.role == cur.role and cur.role != "system":
            raise ValueError("roles must alternate")


# ---------------------------------------------------------------------------
# Remote clients
# ---------------------------------------------------------------------------

@dataclass
class RetryPolicy:
    attempts: int = 3
    backoff_initial: float = 0.5  # seconds, doubles per attempt


def _request_with_retry(client: httpx.Client, method: str, url: str,
                        policy: RetryPolicy, **kwargs) -> httpx.Response:
    last: Exception | None = None
    for attempt in range(policy.attempts):
        try:
            resp = client.request(method, url, **kwargs)
        except httpx.TransportError as e:
            last = RetryableProviderError(f"transport failure: {e}")
        else:
            if resp.status_code >= 500:
                last = RetryableProviderError(
                    f"server error {resp.status_code}", status=resp.status_code)
            elif resp.status_code >= 300:
                raise ProviderError(f"provider error {resp.status_code}: {resp.text[:200]}",
                                    status=resp.status_code)
            else:
                return resp
        if attempt < policy.attempts - 1:
            time.sleep(policy.backoff_initial * (2 ** attempt))
    raise last  # type: ignore[misc]


@dataclass
class RemoteConfig:
    base_url: str
    model: str = ""
    api_key: str = ""
    timeout: float = 30.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)


class _RemoteBase:
    def __init__(self, config: RemoteConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(base_url=config.base_url, headers=headers,
                                    timeout=config.timeout, transport=transport)

    def _post(self, path: str, payload: dict) -> dict:
        resp = _request_with_retry(self._client, "POST", path,
                                   self.config.retry, json=payload)
        return resp.json()


class RemoteChat(_RemoteBase):
    """OpenAI-compatible chat-completions client."""

    def chat(self, messages: Sequence[ChatMessage],
             decoding: Decoding = Decoding()) -> str:
        _validate_roles(messages)
        payload = {
            "model": self.config.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "max_tokens": decoding.max_tokens,
            "temperature": 0.0 if decoding.greedy else decoding.temperature,
        }
        data = self._post("/v1/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError) as e:
            raise ProviderError(f"malformed chat response: {e}") from None


class RemoteEmbedder(_RemoteBase):
    """OpenAI-compatible embeddings client. Vectors are L2-normalized locally."""

    def __init__(self, config: RemoteConfig, dim: int = EMBED_DIM,
                 transport: Optional[httpx.BaseTransport] = None):
        super().__init__(config, transport)
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        _check_texts(texts)
        data = self._post("/v1/embeddings",
                          {"model": self.config.model, "input": list(texts)})
        out = []
        for item in sorted(data["data"], key=lambda d: d["index"]):
            v = np.asarray(item["embedding"], dtype=np.float32)
            if v.shape != (self.dim,):
                raise ProviderError(
                    f"embedding dimension mismatch: got {v.shape[0]}, want {self.dim}")
            n = float(np.linalg.norm(v))
            out.append(v / n if n > 0 else v)
        return out


class RemoteNer(_RemoteBase):
    """Simple JSON NER endpoint: POST /ner {"text": ...} ->
    {"entities": [{"text","category","start","end"}]}."""

    def ner(self, text: str) -> list[NamedEntity]:
        if not text:
            return []
        data = self._post("/ner", {"text": text})
        ents = []
        for e in data.get("entities", []):
            if e["category"] not in NER_CATEGORIES:
                continue
            if not entity_candidate_ok(e["text"]):
                continue
            ents.append(NamedEntity(text=e["text"], category=e["category"],
                                    start=e["start"], end=e["end"]))
        ents.sort(key=lambda e: e.start)
        return ents


class RemoteReranker(_RemoteBase):
    """Cross-encoder rerank endpoint: POST /rerank {"model","query","documents"}
    -> {"results": [{"index", "relevance_score"}]}. Scores are expected to be
    sigmoid-normalized to [0,1] by the deployment."""

    def rerank(self, query: str, chunks: Sequence[str]) -> list[float]:
        if not chunks:
            raise ValueError("chunks must be non-empty")
        data = self._post("/rerank", {"model": self.config.model,
                                      "query": query,
                                      "documents": list(chunks)})
        scores = [0.0] * len(chunks)
        for r in data["results"]:
            scores[r["index"]] = float(r["relevance_score"])
        return scores


@dataclass
class ProviderBundle:
    """The four capabilities bundled for pipeline code."""

    chat: ChatProvider
    embedder: EmbeddingProvider
    ner: NerProvider
    reranker: RerankProvider

    @classmethod
    def offline(cls, lexicon: Optional[dict[str, str]] = None,
                chat_fixtures: Optional[dict[str, str]] = None) -> "ProviderBundle":
        return cls(chat=ScriptedChat(chat_fixtures),
                   embedder=HashingEmbedder(),
                   ner=LexiconNer(lexicon or {}),
                   reranker=OverlapReranker())
