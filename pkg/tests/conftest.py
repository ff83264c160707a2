import warnings

import pytest

from fincheck.corpus import Corpus
from fincheck.fixtures import FIXTURE_SEED, generate_fixture_corpus
from fincheck.pipeline import Pipeline


@pytest.fixture(scope="session")
def bundle():
    return generate_fixture_corpus(FIXTURE_SEED)


@pytest.fixture(scope="session")
def corpus(bundle):
    return Corpus.from_jsonl(bundle.corpus_jsonl)


@pytest.fixture(scope="session")
def pipeline(corpus):
    return Pipeline(corpus)


@pytest.fixture(autouse=True)
def _quiet_extraction_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=UserWarning)
        yield


# A single filing holding the ground truth behind the six taxonomy exemplars:
# revenue $38.7B (prior year $35,833M, so growth is 8.0%), gross margin 58.1%,
# a Q2 decline, and Jane Smith as COO.
EXEMPLAR_FILING = {
    "schema": "finground-corpus/1", "id": "ACME-10K-2024", "title": "Acme Holdings 10-K 2024",
    "company": "Acme Holdings", "filing_date": "2025-02-20",
    "sections": [
        {"id": "1", "heading": "Business", "page": 3, "paragraphs": [
            "Jane Smith serves as Chief Operating Officer of Acme Holdings.",
            "John Rivera serves as Chief Financial Officer of Acme Holdings.",
        ]},
        {"id": "7", "heading": "MD&A", "page": 30, "paragraphs": [
            "Revenue declined in Q2 2024 compared with Q1 2024, reflecting weaker orders.",
        ]},
    ],
    "tables": [
        {"id": "1", "page": 31, "caption": "Consolidated Statements of Operations",
         "col_headers": ["FY2024", "FY2023"],
         "row_headers": ["Total revenue", "Cost of revenue", "Gross profit"],
         "cells": [["$38,700M", "$35,833M"], ["$16,215.3M", "$15,100M"], ["$22,484.7M", "$20,733M"]]},
    ],
}


@pytest.fixture(scope="session")
def exemplar_corpus():
    import json

    return Corpus.from_jsonl(json.dumps(EXEMPLAR_FILING))


@pytest.fixture(scope="session")
def exemplar_pipeline(exemplar_corpus):
    return Pipeline(exemplar_corpus)


# criterion number -> (title, passed); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[n]
        terminalreporter.write_line(f"AC{n:<2} {'PASS' if ok else 'FAIL'}  {title}")
