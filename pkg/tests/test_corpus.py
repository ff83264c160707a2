import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fincheck.corpus import ChunkPolicy, Corpus, chunk_document, parse_document, resolve_citation, split_paragraph
from fincheck.errors import DanglingCitation, LabelMismatch, SchemaError, TableShapeError
from fincheck.model import ElementType, ParagraphCitation, TableCellCitation, citation_from_provenance, parse_citation
from fincheck.numbers import PeriodKind


def filing(**over):
    raw = {
        "schema": "finground-corpus/1", "id": "AAPL-10K", "title": "Example 10-K", "company": "Example Corp",
        "filing_date": "2024-11-01",
        "sections": [{"id": "7", "heading": "MD&A", "page": 20, "paragraphs": ["Revenue rose in the year."]}],
        "tables": [],
    }
    raw.update(over)
    return raw


def margin_table():
    return {"id": "2", "page": 21, "caption": "Margins", "col_headers": ["Q3 2023", "Q4 2023"],
            "row_headers": ["Revenue", "Gross Margin"], "cells": [["$90B", "$95B"], ["44.5%", "45.2%"]]}


def test_minimal_filing():
    doc = parse_document(filing())
    assert len(doc.sections) == 1 and doc.tables == ()


def test_quarter_headers_give_cell_periods():
    doc = parse_document(filing(tables=[margin_table()]))
    t = doc.tables[0]
    assert t.cells[0][0].period.kind is PeriodKind.QUARTER
    assert (t.cells[1][1].period.year, t.cells[1][1].period.quarter) == (2023, 4)
    assert str(t.cells[1][1].parsed) == "45.2%"


def test_multilevel_header_flattened():
    t = margin_table()
    t["col_headers"] = [["Revenue", "Product"], ["Revenue", "Services"]]
    doc = parse_document(filing(tables=[t]))
    assert doc.tables[0].col_headers == ("Revenue / Product", "Revenue / Services")
    assert doc.tables[0].col_paths[1] == ("Revenue", "Services")


def test_missing_field_is_schema_error():
    raw = filing()
    del raw["filing_date"]
    with pytest.raises(SchemaError):
        parse_document(raw)


def test_ragged_row_is_shape_error():
    t = margin_table()
    t["cells"] = [["$90B"], ["44.5%", "45.2%"]]
    with pytest.raises(TableShapeError):
        parse_document(filing(tables=[t]))


def test_empty_row_padded():
    t = margin_table()
    t["cells"] = [[], ["44.5%", "45.2%"]]
    doc = parse_document(filing(tables=[t]))
    assert [c.raw_text for c in doc.tables[0].cells[0]] == ["", ""]


def test_short_paragraph_single_chunk():
    words = " ".join(f"w{i}" for i in range(40))
    doc = parse_document(filing(sections=[{"id": "1", "page": 1, "paragraphs": [words]}]))
    assert len([c for c in chunk_document(doc) if not c.is_cell]) == 1


def test_table_chunk_count():
    t = {"id": "3", "page": 21, "caption": "c", "col_headers": ["a", "b", "c", "d"], "row_headers": ["x", "y", "z"],
         "cells": [["1", "2", "3", "4"]] * 3}
    chunks = chunk_document(parse_document(filing(tables=[t])))
    assert sum(c.is_cell for c in chunks) == 12
    assert sum(c.provenance.element_type is ElementType.TABLE for c in chunks) == 1


def test_long_paragraph_split():
    words = " ".join(f"w{i}" for i in range(300))
    doc = parse_document(filing(sections=[{"id": "1", "page": 1, "paragraphs": [words]}]))
    parts = [c.text for c in chunk_document(doc, ChunkPolicy(max_tokens=128)) if not c.is_cell]
    assert len(parts) == 3
    assert all(len(p.split()) <= 128 for p in parts)
    assert " ".join(parts) == words


def test_cell_chunk_text_format():
    chunks = chunk_document(parse_document(filing(tables=[margin_table()])))
    cell = next(c for c in chunks if c.chunk_id.endswith("r1c1"))
    assert cell.text == "Gross Margin | Q4 2023 | 45.2%"
    assert cell.header_context == ("Gross Margin", "Q4 2023")


def test_resolve_citation():
    corpus = Corpus.build([parse_document(filing(tables=[margin_table()]))])
    prov = resolve_citation(corpus, parse_citation("[Doc:AAPL-10K, Table 2, Row: Gross Margin, Col: Q4 2023]"))
    assert prov.cell.row_index == 1 and prov.cell.col_index == 1
    assert resolve_citation(corpus, parse_citation("[Doc: AAPL-10K, §7, p.20]")).section_id == "7"


def test_dangling_and_mismatch():
    corpus = Corpus.build([parse_document(filing(tables=[margin_table()]))])
    with pytest.raises(DanglingCitation):
        resolve_citation(corpus, TableCellCitation("AAPL-10K", "9", "Revenue", "Q3 2023"))
    with pytest.raises(DanglingCitation):
        resolve_citation(corpus, ParagraphCitation("AAPL-10K", "99", 1))
    with pytest.raises(LabelMismatch):
        resolve_citation(corpus, TableCellCitation("AAPL-10K", "2", "Gross Margin", "Q3 2023", 0, 0))


def test_fixture_chunks_resolve_and_round_trip(corpus):
    for chunk in corpus.chunks.values():
        if chunk.provenance.element_type is ElementType.TABLE:
            continue
        resolve_citation(corpus, citation_from_provenance(chunk.provenance))
        if chunk.is_cell:
            row, col, value = chunk.text.split(" | ", 2)
            assert (row, col) == (chunk.cell.row_label, chunk.cell.col_label)
            assert value == corpus.cell_of(chunk).raw_text


def test_corpus_jsonl_round_trip(corpus):
    again = Corpus.from_jsonl(corpus.to_jsonl())
    assert again.corpus_hash == corpus.corpus_hash
    assert list(again.chunks) == list(corpus.chunks)


@settings(max_examples=50)
@given(st.lists(st.text(alphabet="abcde .", min_size=1, max_size=8), min_size=1, max_size=200),
       st.integers(min_value=2, max_value=64))
def test_split_paragraph_preserves_tokens(words, max_tokens):
    text = " ".join(words)
    parts = split_paragraph(text, max_tokens)
    assert " ".join(parts).split() == text.split()
    assert all(len(p.split()) <= max_tokens for p in parts)


def test_chunking_deterministic(bundle):
    first = [json.loads(l)["id"] for l in bundle.corpus_jsonl.splitlines()]
    doc = parse_document(json.loads(bundle.corpus_jsonl.splitlines()[0]))
    assert [c.chunk_id for c in chunk_document(doc)] == [c.chunk_id for c in chunk_document(doc)]
    assert len(first) >= 5
