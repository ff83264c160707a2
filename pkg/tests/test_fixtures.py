import json
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fincheck.claims import ClaimType, make_claim
from fincheck.corpus import Corpus
from fincheck.fixtures import FIXTURE_SEED, generate_fixture_corpus
from fincheck.formulas import default_library, recompute
from fincheck.metrics import hal_rate
from fincheck.pipeline import Pipeline
from fincheck.verification import VerdictLabel, verify_claims


def test_fixed_seed_is_byte_identical(bundle):
    again = generate_fixture_corpus(FIXTURE_SEED)
    assert again.corpus_jsonl == bundle.corpus_jsonl
    assert again.suite_jsonl() == bundle.suite_jsonl()
    assert again.labeled_claims_jsonl() == bundle.labeled_claims_jsonl()
    assert generate_fixture_corpus(FIXTURE_SEED + 1).suite_jsonl() != bundle.suite_jsonl()


def test_shape(bundle, corpus):
    assert len(corpus.documents) >= 5
    assert len(bundle.cases) >= 60
    kinds = {c.claim_type for case in bundle.cases for c in case.claims}
    assert kinds == {t.value for t in ClaimType}


def test_gross_margin_recomputes_from_cells(bundle, corpus):
    gm = next(t for t in default_library() if t.name == "gross_margin")
    checked = 0
    for doc_id, fin in bundle.financials.items():
        for y in fin.revenue:
            rev = corpus.chunks.get(f"{doc_id}::t::1::r0c{_col(corpus, doc_id, y)}")
            cogs = corpus.chunks.get(f"{doc_id}::t::1::r1c{_col(corpus, doc_id, y)}")
            if rev is None:
                continue
            value = recompute(gm, {"revenue": corpus.cell_of(rev).parsed, "cogs": corpus.cell_of(cogs).parsed})
            exact = 100 * (1 - Fraction(fin.cogs[y]) / Fraction(fin.revenue[y]))
            assert abs(Fraction(value.magnitude) - exact) < Fraction(1, 10**45)
            checked += 1
    assert checked == 2 * len(bundle.financials)


def _col(corpus, doc_id, year):
    table = next(t for t in corpus.documents[doc_id].tables if t.table_id == "1")
    return table.col_headers.index(f"FY{year}") if f"FY{year}" in table.col_headers else -1


@pytest.mark.parametrize("rate", [0.0, 0.3, 0.55, 1.0])
def test_exact_error_budget(rate):
    b = generate_fixture_corpus(FIXTURE_SEED, n_answers=40, error_rate=rate, n_claims=100)
    assert b.n_claims == 100
    assert sum(case.hallucinated for case in b.cases) == round(rate * 100)


@given(st.integers(0, 2**32), st.integers(20, 120))
@settings(max_examples=15, deadline=None)
def test_error_budget_any_seed(seed, n_claims):
    b = generate_fixture_corpus(seed, n_answers=20, error_rate=0.3, n_claims=n_claims)
    assert b.n_claims == n_claims
    assert sum(case.hallucinated for case in b.cases) == round(0.3 * n_claims)


def test_labeled_rows_match_cases(bundle):
    rows = [json.loads(line) for line in bundle.labeled_claims_jsonl().splitlines()]
    assert len(rows) == bundle.n_claims
    assert {r["gold_label"] for r in rows} <= {"supported", "contradicted", "unverifiable"}
    assert all(r["query"] for r in rows)


def _verdicts(pipeline, case):
    claims = [make_claim(f"{case.answer_id}:{c.claim_id}", c.text, claim_type=ClaimType(c.claim_type),
                         library=pipeline.library) for c in case.claims]
    ev = pipeline.evidence_for([c.text for c in claims], case.query, pipeline.scope(case.query))
    return verify_claims(claims, pipeline.corpus, ev, pipeline.providers.nli, pipeline.library, pipeline.verifier)


def test_gold_answers_are_all_supported():
    clean = generate_fixture_corpus(FIXTURE_SEED, error_rate=0.0)
    p = Pipeline(Corpus.from_jsonl(clean.corpus_jsonl))
    counts = []
    for case in clean.cases:
        outs = _verdicts(p, case)
        assert all(o.verdict is VerdictLabel.SUPPORTED for o in outs), [o.explanation for o in outs]
        counts.append((sum(o.verdict.hallucinated for o in outs), len(outs)))
    assert hal_rate(counts) == 0.0


def test_near_misses_follow_the_tolerance(bundle, pipeline):
    seen = set()
    for case in bundle.cases:
        near = [(i, c) for i, c in enumerate(case.claims) if c.near_miss]
        if not near:
            continue
        outs = _verdicts(pipeline, case)
        for i, c in near:
            expected = "supported" if c.near_miss == "0.4" else "contradicted"
            assert c.gold_label == expected
            assert outs[i].verdict.value == expected, c.text
            seen.add(c.near_miss)
    assert seen == {"0.4", "0.6"}


def test_near_miss_distance(bundle, pipeline):
    # the planted value sits 0.4% or 0.6% away from the recomputed truth
    for case in bundle.cases:
        outs = None
        for i, c in enumerate(case.claims):
            if not c.near_miss:
                continue
            outs = outs or _verdicts(pipeline, case)
            claimed = make_claim("x", c.text, claim_type=ClaimType.COMPUTATIONAL).numeric.value.magnitude
            truth = outs[i].recomputed_value.magnitude
            rel = abs(claimed - truth) / max(abs(claimed), abs(truth))
            target = Decimal(c.near_miss) / 100
            assert abs(rel - target) < Decimal("0.0005")
