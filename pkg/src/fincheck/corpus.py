"""Filing ingestion, structure-aware chunking and citation resolution."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Iterable, Optional

from .errors import DanglingCitation, LabelMismatch, NotNumeric, SchemaError, TableShapeError
from .model import (
    HEADER_SEP, Cell, CellAddress, Citation, Document, ElementType, Paragraph,
    ParagraphCitation, ProvenanceTuple, Section, TableStructure,
)
from .numbers import normalize_number, parse_period

CORPUS_SCHEMA = "finground-corpus/1"


@dataclass(frozen=True)
class ChunkPolicy:
    max_tokens: int = 128
    include_table_summaries: bool = True


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    text: str
    provenance: ProvenanceTuple
    cell: Optional[CellAddress] = None
    header_context: tuple[str, ...] = ()

    @property
    def is_cell(self) -> bool:
        return self.cell is not None

    @property
    def document_id(self) -> str:
        return self.provenance.document_id


# ---------------------------------------------------------------------------
# parsing

def _require(raw: dict, key: str, where: str):
    if key not in raw:
        raise SchemaError(f"{where}: missing required field {key!r}")
    return raw[key]


def _flatten_header(h) -> tuple[str, tuple[str, ...]]:
    if isinstance(h, str):
        parts = tuple(p.strip() for p in h.split(HEADER_SEP.strip())) if HEADER_SEP in h else (h.strip(),)
        return h.strip(), parts
    if isinstance(h, (list, tuple)) and h and all(isinstance(p, str) for p in h):
        parts = tuple(p.strip() for p in h)
        return HEADER_SEP.join(parts), parts
    raise SchemaError(f"header must be a string or list of strings, got {h!r}")


def _rectangularize(cells, n_rows: int, n_cols: int, table_id: str) -> list[list[str]]:
    """Pad only where exactly one alignment exists: an empty row, or missing rows
    when no rows were given at all. Short non-empty rows are ambiguous."""
    if not isinstance(cells, list):
        raise SchemaError(f"table {table_id}: cells must be a list of rows")
    if not cells:
        return [[""] * n_cols for _ in range(n_rows)]
    if len(cells) != n_rows:
        raise TableShapeError(f"table {table_id}: {len(cells)} rows for {n_rows} row headers")
    grid = []
    for i, row in enumerate(cells):
        if not isinstance(row, list):
            raise SchemaError(f"table {table_id}: row {i} is not a list")
        if len(row) == 0:
            row = [""] * n_cols
        elif len(row) != n_cols:
            raise TableShapeError(
                f"table {table_id}: row {i} has {len(row)} cells for {n_cols} columns; alignment ambiguous"
            )
        grid.append(["" if v is None else str(v) for v in row])
    return grid


def _parse_cell(raw: str, row_label: str, col_label: str) -> Cell:
    parsed = None
    if raw.strip():
        try:
            parsed = normalize_number(raw)
        except NotNumeric:
            parsed = None
    period = parse_period(col_label)
    if not period.specified:
        period = parse_period(row_label)
    return Cell(raw, parsed, period)


def _normalize_ws(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def parse_document(raw: dict) -> Document:
    """Build a :class:`Document` from one corpus JSON object."""
    if not isinstance(raw, dict):
        raise SchemaError("document must be a JSON object")
    schema = raw.get("schema", CORPUS_SCHEMA)
    if schema != CORPUS_SCHEMA:
        raise SchemaError(f"unsupported schema {schema!r}")
    doc_id = str(_require(raw, "id", "document"))
    where = f"document {doc_id}"
    title = str(_require(raw, "title", where))
    try:
        filing_date = date.fromisoformat(_require(raw, "filing_date", where))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: filing_date must be YYYY-MM-DD") from exc

    sections = []
    seen = set()
    for s in _require(raw, "sections", where):
        sid = str(_require(s, "id", f"{where} section"))
        if sid in seen:
            raise SchemaError(f"{where}: duplicate section id {sid!r}")
        seen.add(sid)
        page = int(s.get("page", 1))
        paras = []
        for p in s.get("paragraphs", []):
            if isinstance(p, dict):
                paras.append(Paragraph(_normalize_ws(str(_require(p, "text", where))), int(p.get("page", page))))
            else:
                paras.append(Paragraph(_normalize_ws(str(p)), page))
        sections.append(Section(sid, str(s.get("heading", "")), page, tuple(paras)))
    if not sections:
        raise SchemaError(f"{where}: at least one section is required")

    tables = []
    for t in raw.get("tables", []):
        tid = str(_require(t, "id", f"{where} table"))
        col_flat = [_flatten_header(h) for h in _require(t, "col_headers", f"{where} table {tid}")]
        row_headers = [_flatten_header(h)[0] for h in _require(t, "row_headers", f"{where} table {tid}")]
        grid = _rectangularize(_require(t, "cells", f"{where} table {tid}"), len(row_headers), len(col_flat), tid)
        col_headers = [c[0] for c in col_flat]
        cells = tuple(
            tuple(_parse_cell(grid[r][c], row_headers[r], col_headers[c]) for c in range(len(col_headers)))
            for r in range(len(row_headers))
        )
        page = int(t.get("page", 1))
        section_id = str(t["section"]) if "section" in t else _section_for_page(sections, page)
        if section_id not in seen:
            raise SchemaError(f"{where} table {tid}: unknown section {section_id!r}")
        tables.append(TableStructure(
            tid, str(t.get("caption", "")), tuple(col_headers), tuple(row_headers), cells,
            page, section_id, tuple(c[1] for c in col_flat),
        ))
    if len({t.table_id for t in tables}) != len(tables):
        raise SchemaError(f"{where}: duplicate table ids")
    return Document(doc_id, title, filing_date, tuple(sections), tuple(tables), str(raw.get("company", "")))


def _section_for_page(sections: list[Section], page: int) -> str:
    best = sections[0]
    for s in sections:
        if s.page <= page:
            best = s
    return best.section_id


def document_to_json(doc: Document) -> dict:
    """Inverse of :func:`parse_document` (normalized form)."""
    return {
        "schema": CORPUS_SCHEMA,
        "id": doc.doc_id,
        "title": doc.title,
        "company": doc.company,
        "filing_date": doc.filing_date.isoformat(),
        "sections": [
            {"id": s.section_id, "heading": s.heading, "page": s.page,
             "paragraphs": [p.text if p.page == s.page else {"text": p.text, "page": p.page} for p in s.paragraphs]}
            for s in doc.sections
        ],
        "tables": [
            {"id": t.table_id, "page": t.page, "section": t.section_id, "caption": t.caption,
             "col_headers": [list(p) if len(p) > 1 else p[0] for p in t.col_paths] or list(t.col_headers),
             "row_headers": list(t.row_headers),
             "cells": [[c.raw_text for c in row] for row in t.cells]}
            for t in doc.tables
        ],
    }


# ---------------------------------------------------------------------------
# chunking

def split_paragraph(text: str, max_tokens: int) -> list[str]:
    """Greedy whitespace-token split that prefers to cut after a sentence end."""
    tokens = text.split()
    out = []
    i = 0
    while len(tokens) - i > max_tokens:
        window = tokens[i:i + max_tokens]
        cut = max_tokens
        for j in range(len(window) - 1, max_tokens // 2 - 1, -1):
            if window[j].endswith((".", "!", "?")):
                cut = j + 1
                break
        out.append(" ".join(window[:cut]))
        i += cut
    if i < len(tokens):
        out.append(" ".join(tokens[i:]))
    return out


def cell_text(row_label: str, col_label: str, value: str) -> str:
    return f"{row_label} | {col_label} | {value}"


def chunk_document(doc: Document, policy: ChunkPolicy = ChunkPolicy()) -> list[Chunk]:
    chunks = []
    for s in doc.sections:
        for pi, p in enumerate(s.paragraphs):
            for part, piece in enumerate(split_paragraph(p.text, policy.max_tokens)):
                prov = ProvenanceTuple(doc.doc_id, s.section_id, p.page, ElementType.PARAGRAPH)
                chunks.append(Chunk(f"{doc.doc_id}::p::{s.section_id}::{pi}::{part}", piece, prov))
    for t in doc.tables:
        n_rows, n_cols = t.shape
        for r in range(n_rows):
            for c in range(n_cols):
                addr = t.address(r, c)
                prov = ProvenanceTuple(doc.doc_id, t.section_id, t.page, ElementType.TABLE_CELL, addr)
                chunks.append(Chunk(
                    f"{doc.doc_id}::t::{t.table_id}::r{r}c{c}",
                    cell_text(addr.row_label, addr.col_label, t.cells[r][c].raw_text),
                    prov, addr, (addr.row_label, addr.col_label),
                ))
        if policy.include_table_summaries:
            summary = f"{t.caption}. Rows: {', '.join(t.row_headers)}. Columns: {', '.join(t.col_headers)}."
            prov = ProvenanceTuple(doc.doc_id, t.section_id, t.page, ElementType.TABLE)
            chunks.append(Chunk(f"{doc.doc_id}::t::{t.table_id}::summary", summary, prov))
    return chunks


# ---------------------------------------------------------------------------
# corpus

@dataclass
class Corpus:
    documents: dict[str, Document]
    chunks: dict[str, Chunk]
    policy: ChunkPolicy = ChunkPolicy()
    built_at: str = ""
    schema: str = CORPUS_SCHEMA
    _hash: str = field(default="", repr=False)

    @classmethod
    def build(cls, documents: Iterable[Document], policy: ChunkPolicy = ChunkPolicy()) -> "Corpus":
        docs: dict[str, Document] = {}
        for d in documents:
            if d.doc_id in docs:
                raise SchemaError(f"duplicate document id {d.doc_id!r}")
            docs[d.doc_id] = d
        chunks: dict[str, Chunk] = {}
        for d in docs.values():
            for ch in chunk_document(d, policy):
                chunks[ch.chunk_id] = ch
        return cls(docs, chunks, policy, datetime.now(timezone.utc).isoformat(timespec="seconds"))

    @classmethod
    def from_jsonl(cls, text: str, policy: ChunkPolicy = ChunkPolicy()) -> "Corpus":
        return cls.build([parse_document(json.loads(line)) for line in text.splitlines() if line.strip()], policy)

    @property
    def corpus_hash(self) -> str:
        if not self._hash:
            payload = json.dumps(
                {"docs": [document_to_json(d) for d in self.documents.values()],
                 "policy": [self.policy.max_tokens, self.policy.include_table_summaries]},
                sort_keys=True, ensure_ascii=False,
            )
            self._hash = hashlib.sha256(payload.encode()).hexdigest()
        return self._hash

    def to_jsonl(self) -> str:
        return "".join(json.dumps(document_to_json(d), ensure_ascii=False) + "\n" for d in self.documents.values())

    def cell_chunks(self) -> list[Chunk]:
        return [c for c in self.chunks.values() if c.is_cell]

    def table_of(self, chunk: Chunk) -> TableStructure:
        return self.documents[chunk.document_id].table(chunk.cell.table_id)

    def cell_of(self, chunk: Chunk) -> Cell:
        t = self.table_of(chunk)
        return t.cells[chunk.cell.row_index][chunk.cell.col_index]

    def documents_for_entity(self, entity: str) -> list[Document]:
        """Documents whose company/title mentions ``entity``, newest filing first."""
        from .text import contains_phrase

        if not entity:
            return []
        hits = [d for d in self.documents.values()
                if any(contains_phrase(n, entity) or contains_phrase(entity, n) for n in d.entity_names)]
        return sorted(hits, key=lambda d: (d.filing_date, d.doc_id), reverse=True)


def resolve_citation(corpus: Corpus, citation: Citation) -> ProvenanceTuple:
    """Map a citation to its corpus location, checking labels against headers."""
    doc = corpus.documents.get(citation.doc)
    if doc is None:
        raise DanglingCitation(f"no document {citation.doc!r}")
    if isinstance(citation, ParagraphCitation):
        sec = doc.section(citation.section)
        if sec is None:
            raise DanglingCitation(f"{citation.doc}: no section {citation.section!r}")
        if any(p.page == citation.page for p in sec.paragraphs):
            return ProvenanceTuple(doc.doc_id, sec.section_id, citation.page, ElementType.PARAGRAPH)
        # a table summary is cited by its section and page
        if any(t.section_id == sec.section_id and t.page == citation.page for t in doc.tables):
            return ProvenanceTuple(doc.doc_id, sec.section_id, citation.page, ElementType.TABLE)
        if sec.page == citation.page:
            return ProvenanceTuple(doc.doc_id, sec.section_id, citation.page, ElementType.PARAGRAPH)
        raise DanglingCitation(f"{citation.doc} §{citation.section}: nothing on page {citation.page}")

    table = doc.table(citation.table)
    if table is None:
        raise DanglingCitation(f"{citation.doc}: no table {citation.table!r}")
    n_rows, n_cols = table.shape
    if citation.row_index is not None or citation.col_index is not None:
        r, c = citation.row_index, citation.col_index
        if r is None or c is None or not (0 <= r < n_rows and 0 <= c < n_cols):
            raise DanglingCitation(f"{citation.doc} table {citation.table}: cell ({r}, {c}) out of bounds")
        if table.row_headers[r] != citation.row_label or table.col_headers[c] != citation.col_label:
            raise LabelMismatch(
                f"{citation.doc} table {citation.table}: ({r}, {c}) is "
                f"{table.row_headers[r]!r}/{table.col_headers[c]!r}, cited "
                f"{citation.row_label!r}/{citation.col_label!r}"
            )
    else:
        try:
            r = table.row_headers.index(citation.row_label)
            c = table.col_headers.index(citation.col_label)
        except ValueError as exc:
            raise DanglingCitation(
                f"{citation.doc} table {citation.table}: no cell {citation.row_label!r}/{citation.col_label!r}"
            ) from exc
    return ProvenanceTuple(doc.doc_id, table.section_id, table.page, ElementType.TABLE_CELL, table.address(r, c))

