"""Source-aware chunking, sparse+dense hybrid retrieval with score fusion,
reranking, and keyword-overlap context compression."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .providers import ChatMessage, ChatProvider, EmbeddingProvider, RerankProvider
from .text import STOPWORDS, COMPARATIVE_CUES, content_terms, split_sentences, tokenize

# per-source word-count threshold above which a document is windowed;
# None means the document is always kept whole
CHUNK_THRESHOLDS: dict[str, Optional[int]] = {
    "contract_nli": 300,
    "quac": 400,
    "sharc": None,
    "hotpotqa": None,
}
CHUNK_OVERLAP = 50


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    source: str
    text: str
    word_count: int
    granularity: str = "coarse"  # coarse | fine
    embedding: Optional[np.ndarray] = None

    @property
    def digest(self) -> str:
        return hashlib.md5(self.text.encode("utf-8")).hexdigest()


@dataclass
class RetrievalResult:
    chunk: Chunk
    sparse_score: float = 0.0
    dense_score: float = 0.0
    fused_score: float = 0.0
    rerank_score: float = 0.0


def chunk_document(doc_id: str, text: str, source: str,
                   fine: bool = False) -> list[Chunk]:
    """Split a document into fixed word windows with overlap; ShARC and HotpotQA
    documents are kept whole, ContractNLI chunks above 300 words, QuAC above 400.
    With ``fine`` enabled, per-sentence chunks are additionally emitted."""
    if not text or not text.strip():
        raise ValueError("document text must be non-empty")
    words = text.split()
    threshold = CHUNK_THRESHOLDS.get(source)
    chunks: list[Chunk] = []
    if threshold is None or len(words) <= threshold:
        chunks.append(Chunk(chunk_id=f"{doc_id}::c0", doc_id=doc_id,
                            source=source, text=text.strip(),
                            word_count=len(words)))
    else:
        window = threshold
        start, idx = 0, 0
        while True:
            end = min(start + window, len(words))
            piece = " ".join(words[start:end])
            chunks.append(Chunk(chunk_id=f"{doc_id}::c{idx}", doc_id=doc_id,
                                source=source, text=piece,
                                word_count=end - start))
            if end == len(words):
                break
            start = end - CHUNK_OVERLAP
            idx += 1
    if fine:
        for ci, base in enumerate(list(chunks)):
            for si, sent in enumerate(split_sentences(base.text)):
                chunks.append(Chunk(chunk_id=f"{doc_id}::c{ci}s{si}",
                                    doc_id=doc_id, source=source,
                                    text=sent, word_count=len(sent.split()),
                                    granularity="fine"))
    return chunks


class BM25:
    """Okapi BM25 over whitespace/regex tokens (k1=1.2, b=0.75)."""

    def __init__(self, docs: Sequence[str], k1: float = 1.2, b: float = 0.75):
        self.k1, self.b = k1, b
        self.docs = [tokenize(d) for d in docs]
        self.N = len(self.docs)
        self.doc_lens = [len(d) for d in self.docs]
        self.avgdl = (sum(self.doc_lens) / self.N) if self.N else 0.0
        self.term_freqs = [Counter(d) for d in self.docs]
        df: Counter = Counter()
        for tf in self.term_freqs:
            for t in tf:
                df[t] += 1
        self.idf = {t: math.log(1 + (self.N - n + 0.5) / (n + 0.5))
                    for t, n in df.items()}

    def scores(self, query: str) -> list[float]:
        q = tokenize(query)
        out = [0.0] * self.N
        for i, tf in enumerate(self.term_freqs):
            if not self.doc_lens[i]:
                continue
            norm = self.k1 * (1 - self.b + self.b * self.doc_lens[i] / self.avgdl)
            s = 0.0
            for t in q:
                f = tf.get(t)
                if not f:
                    continue
                s += self.idf.get(t, 0.0) * (f * (self.k1 + 1)) / (f + norm)
            out[i] = s
        return out


def minmax_normalize(scores: Sequence[float]) -> list[float]:
    """Per-query min-max normalization to [0,1]; all-equal scores map to 0.5."""
    if not scores:
        return []
    lo, hi = min(scores), max(scores)
    if hi - lo < 1e-12:
        return [0.5] * len(scores)
    return [(s - lo) / (hi - lo) for s in scores]


_INDEX_MAGIC = b"PQIX"


@dataclass
class HybridIndex:
    """Exact sparse+dense index over a chunk corpus."""

    chunks: list[Chunk] = field(default_factory=list)
    _bm25: Optional[BM25] = None
    _matrix: Optional[np.ndarray] = None

    @classmethod
    def build(cls, chunks: Sequence[Chunk], embedder: EmbeddingProvider) -> "HybridIndex":
        # dedup by content digest, first occurrence wins
        seen: set[str] = set()
        kept: list[Chunk] = []
        for c in chunks:
            if c.digest in seen:
                continue
            seen.add(c.digest)
            kept.append(c)
        idx = cls(chunks=kept)
        if kept:
            vecs = embedder.embed([c.text for c in kept])
            idx._matrix = np.stack(vecs).astype(np.float32)
            for c, v in zip(kept, idx._matrix):
                c.embedding = v
            idx._bm25 = BM25([c.text for c in kept])
        return idx

    def hybrid_retrieve(self, query: str, embedder: EmbeddingProvider,
                        k: int = 5, alpha: float = 0.5) -> tuple[list[RetrievalResult], bool]:
        """Top-k chunks by fused score ``alpha*dense + (1-alpha)*sparse`` over
        min-max normalized per-query scores. Returns (results, empty_index_flag);
        ties break by chunk_id ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.chunks:
            return [], True
        sparse_raw = self._bm25.scores(query)
        qv = embedder.embed([query])[0]
        dense_raw = (self._matrix @ qv).tolist()
        sparse = minmax_normalize(sparse_raw)
        dense = minmax_normalize(dense_raw)
        results = []
        for c, s_raw, d_raw, s, d in zip(self.chunks, sparse_raw, dense_raw, sparse, dense):
            fused = alpha * d + (1 - alpha) * s
            # raw scores decide ranking at the degenerate alphas so that
            # alpha=1/alpha=0 reduce exactly to the single-scorer ordering
            if alpha >= 1.0:
                fused_rank = d_raw
            elif alpha <= 0.0:
                fused_rank = s_raw
            else:
                fused_rank = fused
            r = RetrievalResult(chunk=c, sparse_score=s, dense_score=d,
                                fused_score=fused)
            results.append((fused_rank, r))
        results.sort(key=lambda pr: (-pr[0], pr[1].chunk.chunk_id))
        return [r for _, r in results[:k]], False

    # -- persistence ------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "chunks.jsonl", "w", encoding="utf-8") as f:
            for c in self.chunks:
                f.write(json.dumps({"chunk_id": c.chunk_id, "doc_id": c.doc_id,
                                    "source": c.source, "text": c.text,
                                    "word_count": c.word_count,
                                    "granularity": c.granularity}) + "\n")
        mat = self._matrix if self._matrix is not None else np.zeros((0, 384), np.float32)
        with open(d / "embeddings.pqix", "wb") as f:
            f.write(_INDEX_MAGIC)
            f.write(struct.pack("<II", mat.shape[1] if mat.size else 384, mat.shape[0]))
            f.write(mat.astype("<f4").tobytes(order="C"))
        postings = {"doc_texts": [c.text for c in self.chunks]}
        (d / "bm25.json").write_text(json.dumps(postings), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> "HybridIndex":
        d = Path(directory)
        chunks = []
        for line in (d / "chunks.jsonl").read_text(encoding="utf-8").splitlines():
            rec = json.loads(line)
            chunks.append(Chunk(**rec))
        raw = (d / "embeddings.pqix").read_bytes()
        if raw[:4] != _INDEX_MAGIC:
            raise ValueError("bad index file magic")
        dim, count = struct.unpack("<II", raw[4:12])
        mat = np.frombuffer(raw[12:], dtype="<f4").reshape(count, dim).copy()
        idx = cls(chunks=chunks)
        if chunks:
            idx._matrix = mat
            for c, v in zip(chunks, mat):
                c.embedding = v
            idx._bm25 = BM25([c.text for c in chunks])
        return idx


def compress_chunk(query: str, chunk_text: str) -> str:
    """Retain only sentences sharing a non-stopword keyword with the query,
    preserving original order; if none overlap, keep the single best sentence."""
    q_terms = content_terms(query)
    sentences = split_sentences(chunk_text)
    if not sentences:
        return chunk_text
    overlaps = [len(q_terms & content_terms(s)) for s in sentences]
    kept = [s for s, o in zip(sentences, overlaps) if o > 0]
    if not kept:
        best = max(range(len(sentences)), key=lambda i: (overlaps[i], -i))
        kept = [sentences[best]]
    return " ".join(kept)


def rerank_and_compress(query: str, results: Sequence[RetrievalResult],
                        reranker: RerankProvider, top_m: int = 5,
                        rerank_pool: int = 20) -> tuple[list[tuple[Chunk, str]], bool]:
    """Rerank the top fused results, keep ``top_m``, and compress each kept
    chunk to its query-relevant sentences. Returns (kept, degraded_flag); on
    reranker failure the fused order is used and the flag set."""
    if not results:
        raise ValueError("results must be non-empty")
    pool = list(results[:rerank_pool])
    degraded = False
    try:
        scores = reranker.rerank(query, [r.chunk.text for r in pool])
        for r, s in zip(pool, scores):
            r.rerank_score = s
        pool.sort(key=lambda r: (-r.rerank_score, r.chunk.chunk_id))
    except Exception:
        degraded = True
    kept = pool[:top_m]
    return [(r.chunk, compress_chunk(query, r.chunk.text)) for r in kept], degraded


REWRITE_PROMPT = ("Rewrite the following question as a single self-contained, "
                  "retrieval-friendly query. Output only the rewritten query.\n\n"
                  "History:\n{history}\n\nQuestion: {query}\n\nRewritten query:")

DECOMPOSE_PROMPT = ("Decompose the following question into 2-3 independent "
                    "sub-questions, one per line. Output only the sub-questions."
                    "\n\nQuestion: {query}\n\nSub-questions:")


def rewrite_query(query: str, history: Sequence[str],
                  chat: ChatProvider) -> tuple[str, bool]:
    """Single retrieval-friendly reformulation via the chat provider; identity
    passthrough (flagged) on provider failure."""
    prompt = REWRITE_PROMPT.format(history="\n".join(history) or "(none)",
                                   query=query)
    try:
        out = chat.chat([ChatMessage("user", prompt)]).strip()
    except Exception:
        return query, True
    return (out or query), False


def multihop_trigger(query: str, entity_count: int) -> bool:
    """Heuristic: two or more entities plus a comparative/bridge cue word."""
    terms = set(tokenize(query))
    return entity_count >= 2 and bool(terms & COMPARATIVE_CUES)


def decompose_multihop(query: str, chat: ChatProvider,
                       entity_count: int = 0) -> tuple[list[str], bool]:
    """2-3 sub-queries when the multi-hop trigger fires, else the original
    query; identity passthrough (flagged) on provider failure."""
    if not multihop_trigger(query, entity_count):
        return [query], False
    try:
        out = chat.chat([ChatMessage("user", DECOMPOSE_PROMPT.format(query=query))])
    except Exception:
        return [query], True
    subs = [ln.strip("- ").strip() for ln in out.splitlines() if ln.strip()]
    subs = subs[:3]
    if len(subs) < 2:
        return [query], True
    return subs, False
