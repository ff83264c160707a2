"""Tiered hybrid retrieval over corpus chunks."""

from __future__ import annotations

import hashlib
import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .corpus import Chunk, Corpus
from .errors import (
    BackendUnavailable, DimensionMismatch, EmptyCorpus, RetrievalUnavailable, StaleIndex, ZeroVectorWarning,
)
from .formulas import derived_aliases, metric_lexicon
from .numbers import find_periods
from .text import contains_phrase, tokenize

INDEX_SCHEMA = "finground-bm25/1"
CHANNELS = ("bm25", "dense", "table")


@dataclass(frozen=True)
class ComplexityTier:
    tier: str
    rationale: str

    def __post_init__(self):
        if self.tier not in ("simple", "moderate", "complex"):
            raise ValueError(f"unknown tier {self.tier!r}")


_MULTIHOP = re.compile(
    r"\b(compare[sd]?|comparison|versus|vs\.?|trend(?:s|ed)?|chang(?:e|ed)\s+over|over\s+time|"
    r"relative\s+to|between\s+.+\s+and)\b",
    re.I,
)


def classify_complexity(query: str) -> ComplexityTier:
    """Rule-based routing into simple / moderate / complex."""
    if not query or not query.strip():
        raise ValueError("empty query")
    periods = {p.key() for _, _, p in find_periods(query)}
    metrics = [m for m in metric_lexicon() if contains_phrase(query, m)]
    derived = [m for m in derived_aliases() if contains_phrase(query, m)]
    if len(periods) >= 2:
        return ComplexityTier("complex", f"{len(periods)} distinct periods")
    marker = _MULTIHOP.search(query)
    if marker:
        return ComplexityTier("complex", f"multi-hop marker {marker.group(0)!r}")
    if derived and any(not any(contains_phrase(d, m) for d in derived) for m in metrics):
        return ComplexityTier("complex", "derived metric composed with another metric")
    if metrics:
        return ComplexityTier("moderate", f"metric term {metrics[0]!r}")
    if periods:
        return ComplexityTier("moderate", "single period")
    return ComplexityTier("simple", "no metric or period terms")


# ---------------------------------------------------------------------------
# BM25

@dataclass
class Bm25Index:
    chunk_ids: list[str]
    lengths: list[int]
    postings: dict[str, list[tuple[int, int]]]
    k1: float = 1.2
    b: float = 0.75
    corpus_hash: str = ""

    @property
    def avg_length(self) -> float:
        return sum(self.lengths) / len(self.lengths)

    @property
    def vocabulary(self) -> set[str]:
        return set(self.postings)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        n, df = len(self.chunk_ids), self.df(term)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def serialize(self) -> bytes:
        payload = {
            "schema": INDEX_SCHEMA, "corpus_hash": self.corpus_hash, "k1": self.k1, "b": self.b,
            "chunk_ids": self.chunk_ids, "lengths": self.lengths,
            "postings": {t: self.postings[t] for t in sorted(self.postings)},
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def deserialize(cls, data: bytes, expected_hash: Optional[str] = None) -> "Bm25Index":
        raw = json.loads(data)
        if raw.get("schema") != INDEX_SCHEMA:
            raise StaleIndex(f"unexpected index schema {raw.get('schema')!r}")
        if expected_hash is not None and raw["corpus_hash"] != expected_hash:
            raise StaleIndex("index was built for a different corpus")
        postings = {t: [tuple(p) for p in v] for t, v in raw["postings"].items()}
        return cls(raw["chunk_ids"], raw["lengths"], postings, raw["k1"], raw["b"], raw["corpus_hash"])


def build_bm25_index(chunks: Iterable[tuple[str, str]], k1: float = 1.2, b: float = 0.75,
                     corpus_hash: str = "") -> Bm25Index:
    """Index ``(chunk_id, text)`` pairs."""
    ids, lengths, postings = [], [], {}
    for i, (cid, text) in enumerate(chunks):
        toks = tokenize(text)
        ids.append(cid)
        lengths.append(len(toks))
        for term, tf in sorted(Counter(toks).items()):
            postings.setdefault(term, []).append((i, tf))
    if not ids:
        raise EmptyCorpus("cannot index zero chunks")
    return Bm25Index(ids, lengths, postings, k1, b, corpus_hash)


def bm25_search(index: Bm25Index, query: str, k: int,
                allowed: Optional[set[str]] = None) -> list[tuple[str, float]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    avg = index.avg_length or 1.0
    scores: dict[int, float] = {}
    for term in sorted(set(tokenize(query))):
        if term not in index.postings:
            continue
        idf = index.idf(term)
        for i, tf in index.postings[term]:
            norm = index.k1 * (1 - index.b + index.b * index.lengths[i] / avg)
            scores[i] = scores.get(i, 0.0) + idf * tf * (index.k1 + 1) / (tf + norm)
    ranked = [(index.chunk_ids[i], s) for i, s in scores.items()
              if s > 0 and (allowed is None or index.chunk_ids[i] in allowed)]
    ranked.sort(key=lambda t: (-t[1], t[0]))
    return ranked[:k]


# ---------------------------------------------------------------------------
# dense / table

def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        warnings.warn("cosine undefined for a zero vector; scoring 0", ZeroVectorWarning, stacklevel=2)
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def table_similarity(query_vec, cell_vec, header_vec, alpha: float = 0.6) -> float:
    """Column-header-aware blend: alpha*cos(q, cell) + (1-alpha)*cos(q, header)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    q, c, h = (np.asarray(v, float) for v in (query_vec, cell_vec, header_vec))
    if not (q.shape == c.shape == h.shape):
        raise DimensionMismatch(f"{q.shape}, {c.shape}, {h.shape}")
    return alpha * cosine(q, c) + (1.0 - alpha) * cosine(q, h)


@dataclass(frozen=True)
class EvidenceItem:
    chunk_id: str
    score: float
    channel: str


def fingerprint_of(chunk_ids: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(chunk_ids).encode()).hexdigest()


@dataclass(frozen=True)
class EvidenceSet:
    query: str
    tier: str
    items: tuple[EvidenceItem, ...]
    retrieval_fingerprint: str = ""
    rounds: int = 1

    def __post_init__(self):
        if not self.retrieval_fingerprint:
            object.__setattr__(self, "retrieval_fingerprint", fingerprint_of(self.chunk_ids))

    @property
    def chunk_ids(self) -> tuple[str, ...]:
        return tuple(i.chunk_id for i in self.items)

    def recomputed_fingerprint(self) -> str:
        return fingerprint_of(self.chunk_ids)

    def channels(self) -> set[str]:
        return {i.channel for i in self.items}

    def restricted(self, keep: Callable[[str], bool]) -> "EvidenceSet":
        return EvidenceSet(self.query, self.tier, tuple(i for i in self.items if keep(i.chunk_id)), rounds=self.rounds)

    def to_json(self) -> dict:
        return {"query": self.query, "tier": self.tier, "rounds": self.rounds,
                "fingerprint": self.retrieval_fingerprint,
                "items": [{"chunk_id": i.chunk_id, "score": round(i.score, 12), "channel": i.channel}
                          for i in self.items]}

    @classmethod
    def from_json(cls, raw: dict) -> "EvidenceSet":
        items = tuple(EvidenceItem(i["chunk_id"], float(i["score"]), i["channel"]) for i in raw["items"])
        return cls(raw["query"], raw["tier"], items, raw["fingerprint"], raw.get("rounds", 1))


def interleave(items: Iterable[EvidenceItem], limit: Optional[int] = None) -> tuple[EvidenceItem, ...]:
    """Min-max normalize per channel, then order by normalized score.

    Keeps the best score per (chunk, channel) and drops a chunk seen on an
    earlier-ranked channel."""
    best: dict[tuple[str, str], EvidenceItem] = {}
    for it in items:
        key = (it.chunk_id, it.channel)
        if key not in best or it.score > best[key].score:
            best[key] = it
    by_channel: dict[str, list[EvidenceItem]] = {}
    for it in best.values():
        by_channel.setdefault(it.channel, []).append(it)
    ranked = []
    for ch, its in by_channel.items():
        lo, hi = min(i.score for i in its), max(i.score for i in its)
        for it in its:
            norm = 1.0 if hi == lo else (it.score - lo) / (hi - lo)
            ranked.append((norm, it))
    ranked.sort(key=lambda t: (-t[0], CHANNELS.index(t[1].channel), -t[1].score, t[1].chunk_id))
    seen, out = set(), []
    for _, it in ranked:
        if it.chunk_id in seen:
            continue
        seen.add(it.chunk_id)
        out.append(it)
    return tuple(out[:limit] if limit else out)


@dataclass
class RetrievalConfig:
    k1: float = 1.2
    b: float = 0.75
    alpha: float = 0.6
    k: int = 5
    simple_k: int = 1
    max_rounds: int = 3


MissingTermsHook = Callable[[str, Sequence[EvidenceItem]], list[str]]


@dataclass
class Retriever:
    """Holds the immutable indices for one corpus."""

    corpus: Corpus
    embedder: object
    config: RetrievalConfig = field(default_factory=RetrievalConfig)
    bm25: Optional[Bm25Index] = None
    text_ids: list[str] = field(default_factory=list)
    text_vecs: Optional[np.ndarray] = None
    cell_ids: list[str] = field(default_factory=list)
    cell_vecs: Optional[np.ndarray] = None
    header_vecs: Optional[np.ndarray] = None

    def __post_init__(self):
        chunks = list(self.corpus.chunks.values())
        if self.bm25 is None:
            self.bm25 = build_bm25_index(((c.chunk_id, c.text) for c in chunks),
                                         self.config.k1, self.config.b, self.corpus.corpus_hash)
        elif self.bm25.corpus_hash != self.corpus.corpus_hash:
            raise StaleIndex("BM25 index does not match corpus")
        if self.text_vecs is None:
            text = [c for c in chunks if not c.is_cell]
            cells = [c for c in chunks if c.is_cell]
            try:
                self.text_ids = [c.chunk_id for c in text]
                self.text_vecs = self._embed_all([c.text for c in text])
                self.cell_ids = [c.chunk_id for c in cells]
                self.cell_vecs = self._embed_all([c.text for c in cells])
                self.header_vecs = self._embed_all([" ".join(c.header_context) for c in cells])
            except BackendUnavailable as exc:
                raise RetrievalUnavailable(str(exc)) from exc

    def _embed_all(self, texts):
        if hasattr(self.embedder, "embed_many"):
            return self.embedder.embed_many(texts)
        return np.vstack([self.embedder.embed(t) for t in texts]) if texts else np.zeros((0, 1))

    def _embed_query(self, query: str) -> np.ndarray:
        try:
            return self.embedder.embed(query)
        except BackendUnavailable as exc:
            raise RetrievalUnavailable(str(exc)) from exc

    @staticmethod
    def _allowed(ids: Sequence[str], doc_ids: Optional[set[str]]) -> np.ndarray:
        if doc_ids is None:
            return np.ones(len(ids), bool)
        return np.array([cid.split("::", 1)[0] in doc_ids for cid in ids], bool)

    def _top(self, ids, scores, mask, k, channel) -> list[EvidenceItem]:
        order = sorted((i for i in range(len(ids)) if mask[i] and scores[i] > 1e-12),
                       key=lambda i: (-scores[i], ids[i]))[:k]
        return [EvidenceItem(ids[i], float(scores[i]), channel) for i in order]

    def search_bm25(self, query, k, doc_ids=None) -> list[EvidenceItem]:
        allowed = None if doc_ids is None else {c for c in self.bm25.chunk_ids if c.split("::", 1)[0] in doc_ids}
        return [EvidenceItem(cid, s, "bm25") for cid, s in bm25_search(self.bm25, query, k, allowed)]

    def search_dense(self, query, k, doc_ids=None) -> list[EvidenceItem]:
        if not self.text_ids:
            return []
        q = self._embed_query(query)
        return self._top(self.text_ids, self.text_vecs @ q, self._allowed(self.text_ids, doc_ids), k, "dense")

    def search_tables(self, query, k, doc_ids=None) -> list[EvidenceItem]:
        if not self.cell_ids:
            return []
        q = self._embed_query(query)
        a = self.config.alpha
        # embeddings are unit-norm, so dot products are cosines
        scores = a * (self.cell_vecs @ q) + (1 - a) * (self.header_vecs @ q)
        return self._top(self.cell_ids, scores, self._allowed(self.cell_ids, doc_ids), k, "table")

    def _hybrid(self, query, k, doc_ids) -> tuple[EvidenceItem, ...]:
        return interleave(self.search_dense(query, k, doc_ids) + self.search_tables(query, k, doc_ids))

    def retrieve(self, query: str, tier: Optional[ComplexityTier] = None, k: Optional[int] = None,
                 doc_ids: Optional[set[str]] = None, missing_terms: Optional[MissingTermsHook] = None) -> EvidenceSet:
        tier = tier or classify_complexity(query)
        if tier.tier == "simple":
            kk = k or self.config.simple_k
            return EvidenceSet(query, "simple", tuple(self.search_bm25(query, kk, doc_ids)))
        kk = k or self.config.k
        if tier.tier == "moderate":
            return EvidenceSet(query, "moderate", self._hybrid(query, kk, doc_ids))
        return self._iterate(query, kk, doc_ids, missing_terms)

    def _iterate(self, query, k, doc_ids, missing_terms) -> EvidenceSet:
        collected: list[EvidenceItem] = []
        seen: set[str] = set()
        current = query
        rounds = 0
        for rounds in range(1, self.config.max_rounds + 1):
            found = interleave(self.search_bm25(current, k, doc_ids) + list(self._hybrid(current, k, doc_ids)))
            new = [it for it in found if it.chunk_id not in seen]
            for it in new:
                seen.add(it.chunk_id)
                collected.append(it)
            if rounds > 1 and not new:
                break
            missing = missing_terms(query, collected) if missing_terms else []
            if not missing:
                break
            current = f"{query} {' '.join(missing)}"
        return EvidenceSet(query, "complex", interleave(collected), rounds=rounds)

    def retrieve_many(self, queries: Sequence[str], query: str, tier: str, k: Optional[int] = None,
                      doc_ids: Optional[set[str]] = None, missing_terms=None) -> EvidenceSet:
        """Union of per-text retrievals, reported under ``query``."""
        items, rounds = [], 1
        for q in queries:
            es = self.retrieve(q, None, k, doc_ids, missing_terms)
            items.extend(es.items)
            rounds = max(rounds, es.rounds)
        return EvidenceSet(query, tier, interleave(items), rounds=rounds)

    def chunk(self, chunk_id: str) -> Chunk:
        return self.corpus.chunks[chunk_id]
