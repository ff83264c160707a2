import json
import random
import time
from decimal import Decimal, localcontext
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fincheck.backends import StubNli
from fincheck.claims import ClaimType, make_claim
from fincheck.corpus import Corpus
from fincheck.errors import BackendUnavailable, MissingOperands
from fincheck.formulas import default_library, identify_formula, recompute
from fincheck.numbers import NumericValue, Unit
from fincheck.retrieval import EvidenceItem, EvidenceSet
from fincheck.verification import (
    VerdictLabel, VerifierConfig, align_claim, fetch_operands, judge_recomputed, verify_claim, verify_claims,
)


QUARTERLY = {
    "schema": "finground-corpus/1", "id": "BORE-10Q", "title": "Borealis Corp quarterly report",
    "company": "Borealis Corp", "filing_date": "2024-02-01",
    "sections": [{"id": "2", "heading": "Overview", "page": 4, "paragraphs": [
        "Borealis Corp designs industrial pumps for municipal water systems."]}],
    "tables": [
        {"id": "1", "page": 9, "caption": "Quarterly results", "col_headers": ["Q3 2023", "Q4 2023"],
         "row_headers": ["Revenue", "Cost of revenue"], "cells": [["$96M", "$100M"], ["$40M", "$41.9M"]]},
        {"id": "2", "page": 10, "caption": "Key ratios", "col_headers": ["FY2023"],
         "row_headers": ["Gross margin"], "cells": [["45.2%"]]},
    ],
}


def _corpus(*docs):
    return Corpus.from_jsonl("\n".join(json.dumps(d) for d in docs))


def _all(corpus, query="q", ids=None):
    ids = ids if ids is not None else sorted(corpus.chunks)
    return EvidenceSet(query, "moderate", tuple(EvidenceItem(c, 1.0, "bm25") for c in ids))


@pytest.fixture(scope="module")
def quarterly():
    return _corpus(QUARTERLY)


def _verify(text, corpus, config=VerifierConfig(), ids=None):
    claim = make_claim("c", text)
    return verify_claim(claim, corpus, _all(corpus, text, ids), StubNli(), None, config)


# -- alignment

def test_alignment_value_and_period(quarterly):
    claim = make_claim("c", "Gross margin was 45.2% in FY2023")
    cands = align_claim(claim, _all(quarterly), quarterly)
    top = cands[0]
    assert top.chunk_id == "BORE-10Q::t::2::r0c0"
    assert {"value", "period"} <= top.matched_fields
    assert top.alignment_score >= 0.5


def test_alignment_disjoint_vocabulary_is_empty(quarterly):
    claim = make_claim("c", "The chairwoman enjoys sailing")
    assert align_claim(claim, _all(quarterly), quarterly) == []


def test_alignment_ties_ordered_by_chunk_id():
    doc = dict(QUARTERLY, id="DUP-10Q", tables=[], sections=[{"id": "1", "heading": "A", "page": 1, "paragraphs": [
        "Borealis Corp sells pumps.", "Borealis Corp sells pumps."]}])
    corpus = _corpus(doc)
    claim = make_claim("c", "Borealis Corp sells pumps")
    ids = sorted(c for c in corpus.chunks if "::p::" in c)
    cands = align_claim(claim, _all(corpus, ids=list(reversed(ids))), corpus)
    assert [c.chunk_id for c in cands] == ids
    assert cands[0].alignment_score == cands[1].alignment_score


# -- numerical

def test_numerical_exemplar(exemplar_corpus):
    out = _verify("Total revenue was $42.3 billion", exemplar_corpus)
    assert out.verdict is VerdictLabel.CONTRADICTED
    assert "$38.7 billion" in out.explanation and "$42.3 billion" in out.explanation
    assert out.evidence_refs


def test_numerical_exact_match(exemplar_corpus):
    assert _verify("Total revenue was $38.7 billion", exemplar_corpus).verdict is VerdictLabel.SUPPORTED


def test_numerical_is_exact_but_hedge_widens(exemplar_corpus):
    assert _verify("Total revenue was $38.8 billion", exemplar_corpus).verdict is VerdictLabel.CONTRADICTED
    hedged = _verify("Total revenue was approximately $38.8 billion", exemplar_corpus)
    assert hedged.verdict is VerdictLabel.SUPPORTED and hedged.hedged


def test_numerical_without_metric_evidence(exemplar_corpus):
    out = _verify("Total deferred tax assets were $1.2 billion", exemplar_corpus)
    assert out.verdict is VerdictLabel.UNVERIFIABLE


# -- formula reconstruction

def test_identify_formula():
    lib = default_library()
    assert identify_formula("gross margin was 62.4%", lib).name == "gross_margin"
    assert identify_formula("net margin improved", lib).name == "net_margin"
    assert identify_formula("adjusted community EBITDA", lib) is None


def _usd(x):
    return NumericValue(Decimal(str(x)), Unit.CURRENCY, 1, "USD")


def test_recompute_examples():
    lib = {t.name: t for t in default_library()}
    assert recompute(lib["gross_margin"], {"revenue": _usd(100), "cogs": _usd("41.9")}).magnitude == Decimal("58.1")
    assert recompute(lib["yoy_growth"], {"current": _usd(115), "prior": _usd(100)}).magnitude == 15
    for x in ("0.01", "7", "12345.678"):
        r = recompute(lib["current_ratio"], {"current_assets": _usd(x), "current_liabilities": _usd(x)})
        assert r.magnitude == 1 and r.unit is Unit.RATIO


def test_fetch_operands(quarterly):
    doc = quarterly.documents["BORE-10Q"]
    t = identify_formula("gross margin")
    ids = sorted(quarterly.chunks)
    ops = fetch_operands(t, make_claim("c", "Gross margin was 58.1% in Q4 2023"), quarterly, ids, doc)
    assert ops["revenue"][0].magnitude == 100_000_000
    assert ops["cogs"][0].magnitude == Decimal("41900000")
    with pytest.raises(MissingOperands) as exc:
        fetch_operands(t, make_claim("c", "Gross margin was 58.1% in Q1 2024"), quarterly, ids, doc)
    assert exc.value.slots == {"revenue", "cogs"}
    no_cogs = dict(QUARTERLY, tables=[dict(QUARTERLY["tables"][0], row_headers=["Revenue"], cells=[["$96M", "$100M"]])])
    c2 = _corpus(no_cogs)
    with pytest.raises(MissingOperands) as exc:
        fetch_operands(t, make_claim("c", "Gross margin was 58.1% in Q4 2023"), c2, sorted(c2.chunks),
                       c2.documents["BORE-10Q"])
    assert exc.value.slots == {"cogs"}


def test_computational_verdicts(quarterly, exemplar_corpus):
    assert _verify("Gross margin was 58.1% in Q4 2023", quarterly).verdict is VerdictLabel.SUPPORTED
    out = _verify("Gross margin was 62.4%", exemplar_corpus)
    assert out.verdict is VerdictLabel.CONTRADICTED
    assert out.recomputed_value.magnitude == Decimal("58.1")
    assert _verify("Gross margin was 58.3%", exemplar_corpus).verdict is VerdictLabel.SUPPORTED


def test_computational_missing_operand_is_unverifiable(quarterly):
    out = _verify("Operating margin was 20% in Q4 2023", quarterly)
    assert out.verdict is VerdictLabel.UNVERIFIABLE
    assert out.needs_reretrieval


# Independent re-derivations in exact rational arithmetic.
ORACLE = {
    "gross_margin": lambda o: 100 * (1 - o["cogs"] / o["revenue"]),
    "operating_margin": lambda o: 100 * o["operating_income"] / o["revenue"],
    "net_margin": lambda o: 100 * o["net_income"] / o["revenue"],
    "yoy_growth": lambda o: 100 * (o["current"] / o["prior"] - 1),
    "qoq_growth": lambda o: 100 * (o["current"] / o["prior"] - 1),
    "eps": lambda o: o["net_income"] / o["shares"],
    "current_ratio": lambda o: o["current_assets"] / o["current_liabilities"],
    "quick_ratio": lambda o: (o["current_assets"] - o["inventory"]) / o["current_liabilities"],
    "debt_to_equity": lambda o: o["total_debt"] / o["equity"],
    "return_on_assets": lambda o: 100 * o["net_income"] / o["total_assets"],
    "return_on_equity": lambda o: 100 * o["net_income"] / o["equity"],
    "free_cash_flow": lambda o: o["operating_cash_flow"] - o["capex"],
}


def _operand_sets(template, rng, n):
    out = []
    while len(out) < n:
        ops = {s: Decimal(rng.randint(1, 10**7)) / Decimal(10 ** rng.randint(0, 3)) for s in template.slot_names}
        if ORACLE[template.name]({k: Fraction(v) for k, v in ops.items()}) != 0:
            out.append(ops)
    return out


def test_library_matches_oracle_and_tolerance_boundary(exemplar_corpus):
    lib = default_library()
    assert sorted(t.name for t in lib) == sorted(ORACLE)
    chunk = next(iter(exemplar_corpus.chunks.values()))
    cfg = VerifierConfig()
    rng = random.Random(7)
    start = time.perf_counter()
    for t in lib:
        claim = make_claim("c", f"{t.output_aliases[0]} was 1")
        for ops in _operand_sets(t, rng, 1000):
            v = recompute(t, {k: NumericValue(x, Unit.CURRENCY, 1, "USD") for k, x in ops.items()})
            exact = ORACLE[t.name]({k: Fraction(x) for k, x in ops.items()})
            assert abs(Fraction(v.magnitude) - exact) <= abs(exact) * Fraction(1, 10**12)
            with localcontext() as ctx:
                ctx.prec = 100
                for factor, expected in ((Decimal("1.005"), VerdictLabel.SUPPORTED),
                                         (Decimal("0.995"), VerdictLabel.SUPPORTED),
                                         (Decimal("1.0051"), VerdictLabel.CONTRADICTED),
                                         (Decimal("0.9949"), VerdictLabel.CONTRADICTED)):
                    claimed = v.with_magnitude(v.magnitude * factor)
                    c = claim.__class__(**{**claim.__dict__, "numeric": claim.numeric.__class__(claimed)})
                    assert judge_recomputed(c, t, v, [chunk], cfg, 1.0).verdict is expected, (t.name, ops, factor)
    assert time.perf_counter() - start < 10


# -- generic routes

def test_temporal(exemplar_corpus):
    assert _verify("Revenue declined in Q3 2024", exemplar_corpus).verdict is VerdictLabel.CONTRADICTED
    assert _verify("Revenue declined in Q2 2024", exemplar_corpus).verdict is VerdictLabel.SUPPORTED


def test_entity_role(exemplar_corpus):
    out = _verify("The CFO is Jane Smith", exemplar_corpus)
    assert out.verdict is VerdictLabel.CONTRADICTED
    assert out.correction == (("Jane Smith", "John Rivera"),)
    assert _verify("The COO is Jane Smith", exemplar_corpus).verdict is VerdictLabel.SUPPORTED


def test_comparative_recomputes_growth(exemplar_corpus):
    out = _verify("Revenue grew 15% year-over-year", exemplar_corpus)
    assert out.verdict is VerdictLabel.CONTRADICTED
    assert abs(out.recomputed_value.magnitude - 8) < Decimal("0.01")
    assert _verify("Revenue grew 8% year-over-year", exemplar_corpus).verdict is VerdictLabel.SUPPORTED


def test_comparative_growth_from_cells():
    doc = dict(QUARTERLY, id="GRO-10K", tables=[{"id": "1", "page": 2, "caption": "Results",
                                                "col_headers": ["FY2024", "FY2023"], "row_headers": ["Revenue"],
                                                "cells": [["$115M", "$100M"]]}])
    corpus = _corpus(doc)
    out = _verify("Revenue grew 15% year-over-year", corpus)
    assert out.verdict is VerdictLabel.SUPPORTED
    assert out.recomputed_value.magnitude == 15


def test_regulatory(exemplar_corpus):
    assert _verify("Per SEC Rule 10b-5 requirements", exemplar_corpus).verdict is VerdictLabel.SUPPORTED
    assert _verify("Per SEC Rule 99z-9 requirements", exemplar_corpus).verdict is VerdictLabel.UNVERIFIABLE


class _DownNli:
    def judge(self, claim, evidence):
        raise BackendUnavailable("nli offline")


def test_backend_outage_degrades_to_unverifiable(exemplar_corpus):
    claim = make_claim("c", "Acme Holdings saw weaker orders", claim_type=ClaimType.ENTITY_ATTRIBUTE)
    out = verify_claim(claim, exemplar_corpus, _all(exemplar_corpus), _DownNli())
    assert out.verdict is VerdictLabel.UNVERIFIABLE and out.degraded


# -- dispatch

def test_order_preserved_and_totality(exemplar_corpus):
    texts = ["Revenue declined in Q3 2024", "Total revenue was $38.7 billion", "Gross margin was 62.4%"]
    claims = [make_claim(f"c{i}", t) for i, t in enumerate(texts)]
    ev = _all(exemplar_corpus)
    outs = verify_claims(claims, exemplar_corpus, ev, StubNli())
    assert [o.claim_id for o in outs] == ["c0", "c1", "c2"]
    assert [o.verdict for o in outs] == [VerdictLabel.CONTRADICTED, VerdictLabel.SUPPORTED, VerdictLabel.CONTRADICTED]
    par = verify_claims(claims, exemplar_corpus, ev, StubNli(), config=VerifierConfig(workers=4))
    assert [o.to_json() for o in par] == [o.to_json() for o in outs]


def test_no_evidence_flags_reretrieval(exemplar_corpus):
    out = _verify("Total revenue was $38.7 billion", exemplar_corpus, ids=[])
    assert out.verdict is VerdictLabel.UNVERIFIABLE and out.needs_reretrieval


def test_strategies(exemplar_corpus):
    out = _verify("Gross margin was 62.4%", exemplar_corpus, VerifierConfig(strategy="always_supported"))
    assert out.verdict is VerdictLabel.SUPPORTED
    with pytest.raises(ValueError):
        VerifierConfig(strategy="vibes")
    with pytest.raises(ValueError):
        VerifierConfig(weights=(0.5, 0.5, 0.5, 0.5))


def test_determinism(exemplar_corpus):
    a = _verify("Revenue grew 15% year-over-year", exemplar_corpus).to_json()
    assert a == _verify("Revenue grew 15% year-over-year", exemplar_corpus).to_json()


@pytest.fixture(scope="module")
def single_filing_cases(bundle):
    # a restated filing may legitimately surface an older, different figure once
    # the newer chunk is dropped, so the property is checked on single-filing companies
    companies = {}
    for d in (json.loads(line) for line in bundle.corpus_jsonl.splitlines()):
        companies.setdefault(d["company"], []).append(d["id"])
    single = {c for c, ids in companies.items() if len(ids) == 1}
    return [case for case in bundle.cases if case.company in single]


@given(data=st.data())
@settings(max_examples=40, deadline=None)
def test_removing_evidence_never_creates_contradiction(pipeline, single_filing_cases, data):
    case = data.draw(st.sampled_from(single_filing_cases))
    gold = data.draw(st.sampled_from(case.claims))
    claim = make_claim("c", gold.text, claim_type=ClaimType(gold.claim_type), library=pipeline.library)
    ev = pipeline.evidence_for([gold.text], case.query, pipeline.scope(case.query, gold.text))
    full = verify_claim(claim, pipeline.corpus, ev, pipeline.providers.nli, pipeline.library, pipeline.verifier)
    if full.verdict is not VerdictLabel.SUPPORTED:
        return
    keep = data.draw(st.lists(st.booleans(), min_size=len(ev.items), max_size=len(ev.items)))
    sub = ev.restricted(lambda cid: keep[ev.chunk_ids.index(cid)])
    out = verify_claim(claim, pipeline.corpus, sub, pipeline.providers.nli, pipeline.library, pipeline.verifier)
    assert out.verdict is not VerdictLabel.CONTRADICTED
