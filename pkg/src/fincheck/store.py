"""On-disk layout for an ingested corpus and its indices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import Corpus, parse_document
from .errors import EmptyCorpus, SchemaError, StaleIndex
from .retrieval import Bm25Index, RetrievalConfig, Retriever

CORPUS_FILE = "corpus.jsonl"
BM25_FILE = "bm25.json"
VECTORS_FILE = "vectors.npz"
MANIFEST_FILE = "manifest.json"


@dataclass
class IngestReport:
    documents: int = 0
    chunks: int = 0
    corpus_hash: str = ""
    errors: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"documents": self.documents, "chunks": self.chunks, "corpus_hash": self.corpus_hash,
                "errors": self.errors}


def parse_jsonl(text: str, lenient: bool = False) -> tuple[list, list[dict]]:
    """Documents plus per-line errors; strict mode raises on the first bad line."""
    docs, errors = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            docs.append(parse_document(json.loads(line)))
        except (json.JSONDecodeError, SchemaError, ValueError, KeyError, TypeError) as exc:
            if not lenient:
                raise SchemaError(f"line {lineno}: {exc}") from exc
            errors.append({"line": lineno, "error": type(exc).__name__, "detail": str(exc)})
    return docs, errors


def _embedder_id(embedder) -> str:
    return f"{type(embedder).__name__}:{getattr(embedder, 'dim', '?')}"


def save_store(out_dir, corpus: Corpus, retriever: Retriever) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CORPUS_FILE).write_text(corpus.to_jsonl(), encoding="utf-8")
    (out / BM25_FILE).write_bytes(retriever.bm25.serialize())
    np.savez(out / VECTORS_FILE, text_ids=np.array(retriever.text_ids, dtype=str),
             text_vecs=retriever.text_vecs, cell_ids=np.array(retriever.cell_ids, dtype=str),
             cell_vecs=retriever.cell_vecs, header_vecs=retriever.header_vecs)
    manifest = {"corpus_hash": corpus.corpus_hash, "embedder": _embedder_id(retriever.embedder),
                "documents": len(corpus.documents), "chunks": len(corpus.chunks)}
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def ingest(text: str, out_dir, embedder, lenient: bool = False,
           config: Optional[RetrievalConfig] = None) -> IngestReport:
    docs, errors = parse_jsonl(text, lenient)
    if not docs:
        raise EmptyCorpus("no valid documents to ingest")
    corpus = Corpus.build(docs)
    retriever = Retriever(corpus, embedder, config or RetrievalConfig())
    save_store(out_dir, corpus, retriever)
    return IngestReport(len(corpus.documents), len(corpus.chunks), corpus.corpus_hash, errors)


def load_store(store_dir, embedder, config: Optional[RetrievalConfig] = None) -> tuple[Corpus, Retriever]:
    """Load a store; dense vectors are rebuilt if they came from another embedder."""
    d = Path(store_dir)
    corpus = Corpus.from_jsonl((d / CORPUS_FILE).read_text(encoding="utf-8"))
    manifest = json.loads((d / MANIFEST_FILE).read_text(encoding="utf-8"))
    if manifest["corpus_hash"] != corpus.corpus_hash:
        raise StaleIndex("manifest does not match the stored corpus")
    bm25 = Bm25Index.deserialize((d / BM25_FILE).read_bytes(), corpus.corpus_hash)
    config = config or RetrievalConfig()
    if manifest["embedder"] != _embedder_id(embedder):
        return corpus, Retriever(corpus, embedder, config, bm25=bm25)
    v = np.load(d / VECTORS_FILE)
    return corpus, Retriever(corpus, embedder, config, bm25=bm25, text_ids=list(v["text_ids"]),
                             text_vecs=v["text_vecs"], cell_ids=list(v["cell_ids"]), cell_vecs=v["cell_vecs"],
                             header_vecs=v["header_vecs"])
