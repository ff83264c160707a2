import json
from datetime import date
from decimal import Decimal

import pytest

from fincheck.backends import StubGenerator
from fincheck.claims import make_claim
from fincheck.corpus import Corpus
from fincheck.errors import BackendUnavailable, NoEvidenceAvailable, PreconditionViolation, SpanNotFound
from fincheck.model import ElementType, ProvenanceTuple, find_citations
from fincheck.numbers import NumericValue, Unit
from fincheck.pipeline import Pipeline, PipelineConfig
from fincheck.regeneration import (
    FLAG_PREFIX, ConflictCandidate, apply_regeneration, locate_span, regenerate_claim, resolve_conflict,
)
from fincheck.verification import VerdictLabel, VerificationOutcome

MARGINS = {
    "schema": "finground-corpus/1", "id": "AAPL-10K", "title": "Apple 10-K", "company": "Apple Inc.",
    "filing_date": "2024-11-01",
    "sections": [{"id": "7", "heading": "MD&A", "page": 20, "paragraphs": [
        "Apple Inc. reported results for the fourth quarter."]}],
    "tables": [
        {"id": "1", "page": 21, "caption": "Segments", "col_headers": ["Q4 2023"],
         "row_headers": ["Services revenue"], "cells": [["$22.3B"]]},
        {"id": "2", "page": 22, "caption": "Margins", "col_headers": ["Q4 2023"],
         "row_headers": ["Gross Margin"], "cells": [["45.2%"]]},
    ],
}

ALL_GOOD = ("Acme Holdings reported total revenue of $38.7 billion in FY2024. Gross margin was 58.1%. "
            "Revenue declined in Q2 2024.")
ONE_BAD = ("Acme Holdings reported total revenue of $42.3 billion in FY2024. Gross margin was 58.1%. "
           "Revenue declined in Q2 2024.")
THREE_BAD = ("Acme Holdings reported total revenue of $42.3 billion in FY2024. Gross margin was 62.4%. "
             "Revenue declined in Q3 2024.")


# -- span location

def test_locate_verbatim():
    answer = "Revenue rose. Gross margin was 42.3% in Q4 2023. Fine."
    loc = locate_span(answer, "Gross margin was 42.3% in Q4 2023")
    assert loc.token_edit_distance == 0
    assert answer[loc.start:loc.end] == "Gross margin was 42.3% in Q4 2023"


def test_locate_one_insertion():
    answer = "Gross margin was roughly 42.3% last quarter."
    loc = locate_span(answer, "Gross margin was 42.3% last quarter")
    assert loc.token_edit_distance == 1
    assert answer[loc.start:loc.end] == "Gross margin was roughly 42.3% last quarter"


def test_locate_beyond_threshold():
    with pytest.raises(SpanNotFound):
        locate_span("Margins expanded meaningfully over the period we discussed earlier.",
                    "Gross margin was 42.3% in Q4 2023")


# -- per-claim repair

def test_appendix_style_replacement():
    p = Pipeline(Corpus.from_jsonl(json.dumps(MARGINS)))
    r = p.run("What was Apple's gross margin in Q4 2023?", "Apple's gross margin was 42.3% in Q4 2023.")
    assert r["grounded_answer"]["final_text"] == (
        "Apple's gross margin was 45.2% in Q4 2023 [Doc:AAPL-10K, Table 2, Row: Gross Margin, Col: Q4 2023].")
    assert r["grounded_answer"]["mode"] == "incremental"


def test_supported_claim_is_a_precondition_violation(exemplar_corpus):
    claim = make_claim("c0", "Total revenue was $38.7 billion")
    ok = VerificationOutcome("c0", VerdictLabel.SUPPORTED, 1.0, "fine")
    with pytest.raises(PreconditionViolation):
        regenerate_claim(claim, ok, exemplar_corpus, StubGenerator())


def test_unverifiable_without_evidence(exemplar_corpus, exemplar_pipeline):
    claim = make_claim("c0", "Total deferred tax assets were $1.2 billion")
    out = VerificationOutcome("c0", VerdictLabel.UNVERIFIABLE, 1.0, "nothing")
    with pytest.raises(NoEvidenceAvailable):
        regenerate_claim(claim, out, exemplar_corpus, StubGenerator())
    answer = "Total revenue was $38.7 billion in FY2024. Total deferred tax assets were $1.2 billion."
    r = exemplar_pipeline.run("What did Acme Holdings report?", answer)
    text = r["grounded_answer"]["final_text"]
    assert text.splitlines() == ["Total revenue was $38.7 billion in FY2024.",
                                 f'{FLAG_PREFIX}"Total deferred tax assets were $1.2 billion"']
    actions = {a["action"] for a in r["grounded_answer"]["per_claim"]}
    assert actions == {"kept", "removed"}


# -- conflicts

def _cand(value, doc, day):
    prov = ProvenanceTuple(doc, "7", 1, ElementType.PARAGRAPH)
    return ConflictCandidate(NumericValue(Decimal(value), Unit.CURRENCY, 10**9, "USD"), prov, date.fromisoformat(day))


def test_restatement_prefers_latest():
    chosen, flag = resolve_conflict([_cand("35.1", "X-10K-2023", "2024-02-16"),
                                     _cand("35.8", "X-10K-2024", "2025-02-14")], "c1")
    assert chosen.provenance.document_id == "X-10K-2024"
    assert flag.reason == "most-recent-filing" and len(flag.competing) == 2


def test_conflict_ties():
    with pytest.raises(ValueError):
        resolve_conflict([_cand("1", "A", "2024-01-01")])
    _, flag = resolve_conflict([_cand("5", "A", "2024-01-01"), _cand("5", "B", "2024-01-01")])
    assert flag.reason == "duplicate"
    chosen, flag = resolve_conflict([_cand("5", "A", "2024-01-01"), _cand("6", "B", "2024-01-01")])
    assert flag.reason == "date-tie" and chosen.provenance.document_id == "B"


# -- orchestration

@pytest.mark.parametrize("mode", ["auto", "incremental", "flag_only", "full_regen"])
def test_all_supported_passes_through(exemplar_pipeline, mode):
    r = exemplar_pipeline.run("What did Acme Holdings report for FY2024?", ALL_GOOD, mode)
    assert r["verdict_counts"]["supported"] == 3
    assert r["grounded_answer"]["final_text"] == ALL_GOOD
    assert {a["action"] for a in r["grounded_answer"]["per_claim"]} == {"kept"}


def test_single_error_is_incremental(exemplar_pipeline):
    r = exemplar_pipeline.run("What did Acme Holdings report for FY2024?", ONE_BAD)
    g = r["grounded_answer"]
    assert g["mode"] == "incremental"
    assert [a["action"] for a in g["per_claim"]] == ["replaced", "kept", "kept"]
    # offset safety: only the replaced span differs
    suffix = " Gross margin was 58.1%. Revenue declined in Q2 2024."
    assert g["final_text"].endswith(suffix)
    head = g["final_text"][: -len(suffix)]
    assert head.startswith("Acme Holdings reported total revenue of $38.7 billion in FY2024 [Doc:ACME-10K-2024, ")


def test_three_errors_route_to_full_regen(exemplar_pipeline):
    r = exemplar_pipeline.run("What did Acme Holdings report for FY2024?", THREE_BAD)
    g = r["grounded_answer"]
    assert g["mode"] == "full_regen"
    assert r["verdict_counts"]["contradicted"] == 3
    assert "$38.7 billion" in g["final_text"] and "58.1%" in g["final_text"] and "Q2 2024" in g["final_text"]
    again = exemplar_pipeline.run("What did Acme Holdings report for FY2024?",
                                  "\n".join(line for line in g["final_text"].splitlines()
                                            if not line.startswith(FLAG_PREFIX)))
    assert again["verdict_counts"]["contradicted"] == 0


def test_explicit_mode_overrides_threshold(exemplar_pipeline):
    r = exemplar_pipeline.run("What did Acme Holdings report for FY2024?", THREE_BAD, "incremental")
    assert r["grounded_answer"]["mode"] == "incremental"


def test_threshold_is_configurable(exemplar_corpus):
    p = Pipeline(exemplar_corpus, config=PipelineConfig(full_regen_threshold=4))
    r = p.run("What did Acme Holdings report for FY2024?", THREE_BAD)
    assert r["grounded_answer"]["mode"] == "incremental"


def test_flag_only_removes_exactly_the_bad_spans(exemplar_pipeline):
    answer = ("Acme Holdings reported total revenue of $42.3 billion in FY2024. Gross margin was 62.4%. "
              "Revenue declined in Q2 2024.")
    r = exemplar_pipeline.run("What did Acme Holdings report for FY2024?", answer, "flag_only")
    g = r["grounded_answer"]
    lines = g["final_text"].splitlines()
    assert lines[0] == "Revenue declined in Q2 2024."
    assert lines[1:] == [f'{FLAG_PREFIX}"Acme Holdings reported total revenue of $42.3 billion in FY2024"',
                         f'{FLAG_PREFIX}"Gross margin was 62.4%"']
    assert find_citations(g["final_text"]) == []
    assert [a["action"] for a in g["per_claim"]] == ["removed", "removed", "kept"]


class _DownGenerator:
    def generate(self, template_id, slots, schema=None):
        raise BackendUnavailable("generator offline")


def test_backend_failure_is_recorded(exemplar_pipeline):
    claims, outcomes = exemplar_pipeline.checker("q").check_answer(ONE_BAD)
    g = apply_regeneration(ONE_BAD, claims, outcomes, exemplar_pipeline.corpus, _DownGenerator())
    assert g.failures and g.failures[0]["error"] == "BackendUnavailable"
    assert g.per_claim[0].action == "removed"
    assert "$42.3 billion" not in g.final_text.splitlines()[0]


def test_mode_validation(exemplar_corpus):
    with pytest.raises(ValueError):
        apply_regeneration("x", [], [], exemplar_corpus, StubGenerator(), mode="sometimes")
