"""Synthetic filings and a seeded-error answer suite with machine-readable truth."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Optional

from .claims import normalize_reg_id, regulatory_kb
from .corpus import CORPUS_SCHEMA
from .model import ParagraphCitation, TableCellCitation
from .numbers import NumericValue, Unit, format_number

FIXTURE_SEED = 20240917

COMPANIES = [
    ("APX", "Apex Dynamics", "Austin"),
    ("BRL", "Borealis Energy", "Calgary"),
    ("CBT", "Cobalt Retail Group", "Columbus"),
    ("DHF", "Delta Harbor Foods", "Portland"),
    ("EVB", "Evergreen Biotech", "Boston"),
    ("FLN", "Falcon Logistics", "Memphis"),
]
FIRST = ["Jane", "Marcus", "Priya", "Elena", "Tobias", "Grace", "Omar", "Lucia", "Henrik", "Nadia", "Victor",
         "Ingrid", "Samuel", "Keiko", "Rafael", "Mirela", "Dmitri", "Aisha"]
LAST = ["Smith", "Okafor", "Lindqvist", "Moreau", "Castellano", "Whitfield", "Haddad", "Brennan", "Takeda",
        "Novak", "Ferreira", "Albright", "Kowalski", "Mbeki", "Sorensen", "Valdez"]
ROLE_TITLES = {"ceo": "Chief Executive Officer", "cfo": "Chief Financial Officer", "coo": "Chief Operating Officer"}
CLAIM_KINDS = ("numerical", "computational", "comparative", "temporal", "entity_attribute", "regulatory")

M = Decimal(10) ** 6


def _money_cell(millions: Decimal) -> str:
    return format_number(NumericValue(millions * M, Unit.CURRENCY, 10**6, "USD"))


def _money_text(millions: Decimal) -> str:
    scale = 10**9 if millions % 100 == 0 and millions >= 1000 else 10**6
    return format_number(NumericValue(millions * M, Unit.CURRENCY, scale, "USD"), long=True)


def _count_cell(millions: Decimal) -> str:
    return format_number(NumericValue(millions * M, Unit.COUNT, 10**6))


def _round_rel(x: Decimal, rel: Decimal, min_places: int = 1) -> Decimal:
    """Fewest decimal places (up to 4) keeping ``x`` within ``rel`` relative error."""
    q = x
    for places in range(min_places, 5):
        q = round(x, places)
        if x == 0 or abs(q - x) <= rel * abs(x):
            return q
    return q


def _pct(x: Decimal, rel=Decimal("0.0001")) -> str:
    return f"{_round_rel(x, rel)}%"


@dataclass
class Financials:
    revenue: dict[str, Decimal]
    cogs: dict[str, Decimal]
    operating_income: dict[str, Decimal]
    net_income: dict[str, Decimal]
    shares: dict[str, Decimal]
    current_assets: dict[str, Decimal]
    inventory: dict[str, Decimal]
    current_liabilities: dict[str, Decimal]
    total_debt: dict[str, Decimal]
    equity: dict[str, Decimal]
    total_assets: dict[str, Decimal]
    ocf: dict[str, Decimal]
    capex: dict[str, Decimal]
    quarterly: dict[str, Decimal]  # "Q1 2024" -> revenue
    decline_quarter: str = ""


@dataclass
class GoldClaim:
    claim_id: str
    text: str
    claim_type: str
    gold_label: str
    error_kind: str = "none"
    gold_citations: list[str] = field(default_factory=list)
    near_miss: Optional[str] = None


@dataclass
class SeededErrorCase:
    answer_id: str
    query: str
    answer: str
    company: str
    doc_id: str
    claims: list[GoldClaim]

    @property
    def hallucinated(self) -> int:
        return sum(c.gold_label != "supported" for c in self.claims)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class FixtureBundle:
    corpus_jsonl: str
    cases: list[SeededErrorCase]
    seed: int
    error_rate: float
    financials: dict[str, "Financials"] = field(default_factory=dict)  # by document id

    def labeled_claims_jsonl(self) -> str:
        lines = []
        for case in self.cases:
            for c in case.claims:
                lines.append(json.dumps({
                    "answer_id": case.answer_id, "query": case.query, "claim_id": f"{case.answer_id}:{c.claim_id}",
                    "claim_text": c.text, "claim_type": c.claim_type, "gold_label": c.gold_label,
                    "error_kind": c.error_kind, "gold_citations": c.gold_citations,
                }, sort_keys=True))
        return "\n".join(lines) + "\n"

    def suite_jsonl(self) -> str:
        return "".join(json.dumps(c.to_json(), sort_keys=True) + "\n" for c in self.cases)

    @property
    def n_claims(self) -> int:
        return sum(len(c.claims) for c in self.cases)


# ---------------------------------------------------------------------------
# filings

def _financials(rng: random.Random, years: tuple[str, ...]) -> Financials:
    def hundreds(lo, hi):
        return Decimal(rng.randrange(lo, hi, 100))

    rev, cogs, oi, ni, sh = {}, {}, {}, {}, {}
    ca, inv, cl, debt, eq, ta, ocf, capex = {}, {}, {}, {}, {}, {}, {}, {}
    base = hundreds(12_000, 90_000)
    shares = Decimal(rng.randrange(400, 4_000, 10))
    for i, y in enumerate(sorted(years)):
        r = base if i == 0 else Decimal(round(base * Decimal(1 + rng.uniform(-0.08, 0.25)) / 100) * 100)
        base = r
        gm = Decimal(rng.randrange(250, 700)) / 10
        om = Decimal(rng.randrange(60, int(gm * 10) - 80)) / 10
        nm = Decimal(rng.randrange(20, int(om * 10) - 10)) / 10
        rev[y] = r
        cogs[y] = r * (100 - gm) / 100
        oi[y] = r * om / 100
        ni[y] = r * nm / 100
        sh[y] = shares
        ca[y] = hundreds(4_000, 30_000)
        inv[y] = (ca[y] * Decimal(rng.randrange(15, 45)) / 100).quantize(Decimal(1))
        cl[y] = hundreds(3_000, 25_000)
        eq[y] = hundreds(10_000, 60_000)
        debt[y] = hundreds(2_000, 40_000)
        ta[y] = eq[y] + debt[y] + cl[y] + hundreds(1_000, 9_000)
        ocf[y] = (ni[y] * Decimal(rng.randrange(110, 170)) / 100).quantize(Decimal(1))
        capex[y] = (ocf[y] * Decimal(rng.randrange(20, 60)) / 100).quantize(Decimal(1))
    fin = Financials(rev, cogs, oi, ni, sh, ca, inv, cl, debt, eq, ta, ocf, capex, {})
    _quarters(fin, max(years), rng.choice([2, 3]))
    return fin


def _quarters(fin: Financials, year: str, dip: int):
    """Split the annual revenue into quarters that rise except for one dip."""
    total = fin.revenue[year]
    step = max(Decimal(500), (total / 160).quantize(Decimal(100)))
    offsets = [Decimal(0)]
    for q in range(2, 5):
        offsets.append(offsets[-1] + (-2 * step if q == dip else step))
    level = ((total - sum(offsets)) / 4 / 100).quantize(Decimal(1)) * 100
    parts = [level + o for o in offsets]
    parts[3] += total - sum(parts)
    fin.quarterly = {f"Q{q} {year}": v for q, v in zip(range(1, 5), parts)}
    fin.decline_quarter = f"Q{dip} {year}"


def _people(rng: random.Random, used: set) -> dict[str, str]:
    out = {}
    for role in ROLE_TITLES:
        while True:
            name = f"{rng.choice(FIRST)} {rng.choice(LAST)}"
            if name not in used:
                used.add(name)
                out[role] = name
                break
    return out


def _filing(ticker, company, city, fin: Financials, years, people, filed: str, doc_id: str) -> dict:
    cols = [f"FY{y}" for y in sorted(years, reverse=True)]
    ys = sorted(years, reverse=True)
    latest = ys[0]

    def row(d, fmt=_money_cell):
        return [fmt(d[y]) for y in ys]

    qcols = [f"Q{q} {latest}" for q in range(1, 5) if f"Q{q} {latest}" in fin.quarterly]
    decline_before = qcols[qcols.index(fin.decline_quarter) - 1] if fin.decline_quarter in qcols else None
    mdna = [
        f"Revenue declined in {fin.decline_quarter} compared with {decline_before}, reflecting softer order volumes."
        if decline_before else f"Revenue was broadly stable through fiscal {latest}.",
        f"{company} recorded total revenue of {_money_text(fin.revenue[latest])} for fiscal {latest}.",
        "Management continues to monitor input costs and pricing across all segments.",
    ]
    return {
        "schema": CORPUS_SCHEMA,
        "id": doc_id,
        "title": f"{company} Annual Report {latest}",
        "company": company,
        "filing_date": filed,
        "sections": [
            {"id": "1", "heading": "Business", "page": 3, "paragraphs": [
                f"{company} is headquartered in {city}.",
                f"{people['ceo']} serves as Chief Executive Officer of {company}.",
                f"{people['cfo']} serves as Chief Financial Officer of {company}.",
                f"{people['coo']} serves as Chief Operating Officer of {company}.",
            ]},
            {"id": "7", "heading": "Management's Discussion and Analysis", "page": 28, "paragraphs": mdna},
            {"id": "8", "heading": "Financial Statements", "page": 41, "paragraphs": [
                "The consolidated financial statements are presented in millions of U.S. dollars."]},
            {"id": "9A", "heading": "Controls and Procedures", "page": 77, "paragraphs": [
                f"{company} maintains disclosure controls as required by Rule 13a-15 and Section 404 of the "
                "Sarbanes-Oxley Act."]},
        ],
        "tables": [
            {"id": "1", "page": 42, "section": "8", "caption": "Consolidated Statements of Operations",
             "col_headers": cols,
             "row_headers": ["Total revenue", "Cost of revenue", "Operating income", "Net income",
                             "Diluted shares outstanding"],
             "cells": [row(fin.revenue), row(fin.cogs), row(fin.operating_income), row(fin.net_income),
                       row(fin.shares, _count_cell)]},
            {"id": "2", "page": 43, "section": "8", "caption": "Consolidated Balance Sheets",
             "col_headers": cols,
             "row_headers": ["Total current assets", "Inventories", "Total current liabilities", "Total debt",
                             "Total shareholders' equity", "Total assets"],
             "cells": [row(fin.current_assets), row(fin.inventory), row(fin.current_liabilities),
                       row(fin.total_debt), row(fin.equity), row(fin.total_assets)]},
            {"id": "3", "page": 44, "section": "8", "caption": "Consolidated Statements of Cash Flows",
             "col_headers": cols,
             "row_headers": ["Net cash provided by operating activities", "Capital expenditures"],
             "cells": [row(fin.ocf), row(fin.capex)]},
        ] + ([{"id": "4", "page": 45, "section": "8", "caption": "Quarterly Results",
                "col_headers": qcols, "row_headers": ["Revenue"],
                "cells": [[_money_cell(fin.quarterly[q]) for q in qcols]]}] if qcols else []),
    }


# ---------------------------------------------------------------------------
# claims

_ROW = {"revenue": ("1", "Total revenue"), "cogs": ("1", "Cost of revenue"), "operating_income": ("1", "Operating income"),
        "net_income": ("1", "Net income"), "shares": ("1", "Diluted shares outstanding"),
        "current_assets": ("2", "Total current assets"), "inventory": ("2", "Inventories"),
        "current_liabilities": ("2", "Total current liabilities"), "total_debt": ("2", "Total debt"),
        "equity": ("2", "Total shareholders' equity"), "total_assets": ("2", "Total assets"),
        "ocf": ("3", "Net cash provided by operating activities"), "capex": ("3", "Capital expenditures")}

_NUMERIC_PHRASES = {"revenue": "total revenue", "net_income": "net income", "operating_income": "operating income",
                    "total_assets": "total assets", "ocf": "operating cash flow", "total_debt": "total debt"}


def _cite(doc_id: str, field_name: str, year: str) -> str:
    table, row = _ROW[field_name]
    return TableCellCitation(doc_id, table, row, f"FY{year}").rendered


def _derived(fin: Financials, y: str, prev: str) -> dict[str, tuple[str, Decimal, str, list[str]]]:
    """name -> (phrase, exact value, kind, operand fields)."""
    g = lambda d: d[y]  # noqa: E731
    out = {
        "gross_margin": ("gross margin", 100 * (1 - g(fin.cogs) / g(fin.revenue)), "pct", ["revenue", "cogs"]),
        "operating_margin": ("operating margin", 100 * g(fin.operating_income) / g(fin.revenue), "pct",
                             ["operating_income", "revenue"]),
        "net_margin": ("net margin", 100 * g(fin.net_income) / g(fin.revenue), "pct", ["net_income", "revenue"]),
        "eps": ("diluted EPS", g(fin.net_income) / g(fin.shares), "usd", ["net_income", "shares"]),
        "current_ratio": ("current ratio", g(fin.current_assets) / g(fin.current_liabilities), "x",
                          ["current_assets", "current_liabilities"]),
        "quick_ratio": ("quick ratio", (g(fin.current_assets) - g(fin.inventory)) / g(fin.current_liabilities), "x",
                        ["current_assets", "inventory", "current_liabilities"]),
        "debt_to_equity": ("debt-to-equity ratio", g(fin.total_debt) / g(fin.equity), "x", ["total_debt", "equity"]),
        "return_on_assets": ("return on assets", 100 * g(fin.net_income) / g(fin.total_assets), "pct",
                             ["net_income", "total_assets"]),
        "return_on_equity": ("return on equity", 100 * g(fin.net_income) / g(fin.equity), "pct",
                             ["net_income", "equity"]),
        "free_cash_flow": ("free cash flow", g(fin.ocf) - g(fin.capex), "musd", ["ocf", "capex"]),
    }
    if prev in fin.revenue:
        out["yoy_growth"] = ("revenue growth", 100 * (fin.revenue[y] / fin.revenue[prev] - 1), "pct", ["revenue"])
    return out


def _render(value: Decimal, kind: str, rel=Decimal("0.0001")) -> str:
    if kind == "pct":
        return _pct(value, rel)
    if kind == "usd":
        return f"${_round_rel(value, rel, 2)}"
    if kind == "x":
        return str(_round_rel(value, rel, 2))
    return _money_text(_round_rel(value, rel, 0))


def _distort(rng: random.Random, value: Decimal) -> Decimal:
    f = Decimal(str(round(rng.uniform(0.05, 0.2), 3)))
    return value * (1 + f if rng.random() < 0.5 else 1 - f)


def _fabricated_rule(rng: random.Random) -> str:
    kb = regulatory_kb()
    while True:
        rule = f"Rule {rng.randrange(20, 99)}{rng.choice('xyz')}-{rng.randrange(1, 9)}"
        if normalize_reg_id(rule) not in kb:
            return rule


_REAL_RULES = ["Rule 10b-5", "Rule 13a-15", "Regulation FD", "Section 404 of the Sarbanes-Oxley Act", "ASC 606"]


def _make_claim(rng, kind: str, wrong: bool, near: Optional[str], company: str, doc_id: str, fin: Financials,
                people: dict, year: str) -> GoldClaim:
    prev = str(int(year) - 1)
    label = "contradicted" if wrong else "supported"
    error = "none"
    if kind == "numerical":
        f = rng.choice(sorted(_NUMERIC_PHRASES))
        true = fin.__dict__[f][year]
        shown = true
        if wrong:
            while shown == true:
                shown = Decimal(round(_distort(rng, true) / 100) * 100)
            error = "value_substitution"
        text = f"{company} reported {_NUMERIC_PHRASES[f]} of {_money_text(shown)} in FY{year}"
        return GoldClaim("", text, "numerical", label, error, [_cite(doc_id, f, year)])
    if kind == "computational":
        options = _derived(fin, year, prev)
        name = rng.choice(sorted(options))
        phrase, true, unit, fields = options[name]
        cites = [_cite(doc_id, f, y) for f in fields for y in ([year, prev] if name == "yoy_growth" else [year])]
        if near:
            sign = 1 if rng.random() < 0.5 else -1
            off = Decimal("0.004") if near == "0.4" else Decimal("0.006")
            shown = _render(true * (1 + sign * off), unit, Decimal("0.00001"))
            error = "near_miss" if wrong else "none"
        elif wrong:
            shown = _render(_distort(rng, true), unit)
            error = "incorrect_derived_metric"
        else:
            shown = _render(true, unit)
        return GoldClaim("", f"{company}'s {phrase} was {shown} in FY{year}", "computational", label, error,
                         cites, near)
    if kind == "comparative":
        true = 100 * (fin.revenue[year] / fin.revenue[prev] - 1)
        shown = _distort(rng, true) if wrong else true
        if wrong and (shown > 0) != (true > 0):
            shown = -shown
        verb = "grew" if shown >= 0 else "declined"
        cites = [_cite(doc_id, "revenue", year), _cite(doc_id, "revenue", prev)]
        return GoldClaim("", f"{company}'s revenue {verb} {_pct(abs(shown))} year-over-year in FY{year}",
                         "comparative", label, "incorrect_comparison" if wrong else "none", cites)
    if kind == "temporal":
        q = fin.decline_quarter
        if wrong:
            qn = int(q[1])
            q = f"Q{qn + 1 if qn < 4 else qn - 1}{q[2:]}"
            error = "wrong_period"
        return GoldClaim("", f"{company}'s revenue declined in {q}", "temporal", label, error,
                         [ParagraphCitation(doc_id, "7", 28).rendered])
    if kind == "entity_attribute":
        role = rng.choice(sorted(ROLE_TITLES))
        name = people[role]
        if wrong:
            name = people[rng.choice([r for r in ROLE_TITLES if r != role])]
            error = "wrong_role"
        return GoldClaim("", f"The {role.upper()} of {company} is {name}", "entity_attribute", label, error,
                         [ParagraphCitation(doc_id, "1", 3).rendered])
    # regulatory
    if wrong:
        return GoldClaim("", f"Per SEC {_fabricated_rule(rng)} requirements, {company} files quarterly certifications",
                         "regulatory", "unverifiable", "fabricated_regulation", [])
    return GoldClaim("", f"Per SEC {rng.choice(_REAL_RULES)} requirements, {company} files quarterly certifications",
                     "regulatory", "supported", "none", [])


def generate_fixture_corpus(seed: int = FIXTURE_SEED, n_answers: int = 60, error_rate: float = 0.3,
                            near_miss_rate: float = 0.25, kinds=CLAIM_KINDS,
                            n_claims: Optional[int] = None) -> FixtureBundle:
    """Deterministic corpus JSONL plus a seeded-error answer suite.

    Exactly ``round(error_rate * n_claims)`` claims are planted as errors;
    ``n_claims`` pins the total claim count when given."""
    if not 0 <= error_rate <= 1:
        raise ValueError("error_rate must lie in [0, 1]")
    if n_claims is not None and not n_answers <= n_claims <= n_answers * len(kinds):
        raise ValueError("n_claims must allow 1 to len(kinds) claims per answer")
    rng = random.Random(seed)
    docs, books = [], {}
    used: set[str] = set()
    for ticker, company, city in COMPANIES:
        fin = _financials(rng, ("2022", "2023", "2024"))
        people = _people(rng, used)
        latest_id = f"{ticker}-10K-2024"
        docs.append(_filing(ticker, company, city, fin, ("2024", "2023"), people, "2025-02-14", latest_id))
        books[company] = (latest_id, fin, people)
    # one restated filing: the older report shows a different FY2023 revenue
    ticker, company, city = COMPANIES[0]
    latest_id, fin, people = books[company]
    old = Financials(**{k: dict(v) if isinstance(v, dict) else v for k, v in fin.__dict__.items()})
    old.revenue["2023"] = fin.revenue["2023"] + Decimal(rng.randrange(3, 9) * 100)
    old.quarterly, old.decline_quarter = {}, ""
    restated = _filing(ticker, company, city, old, ("2023", "2022"), people, "2024-02-16", f"{ticker}-10K-2023")
    docs.insert(0, restated)
    corpus_jsonl = "".join(json.dumps(d, sort_keys=True, ensure_ascii=False) + "\n" for d in docs)

    # answers: claim slots first, then an exact error budget
    slots = []
    for a in range(n_answers):
        company = COMPANIES[a % len(COMPANIES)][1]
        n = min(len(kinds), rng.choice([1, 2, 3, 3, 4, 5]))
        first = kinds[a % len(kinds)]
        chosen = [first] + rng.sample([k for k in kinds if k != first], n - 1)
        slots.append((company, chosen))
    while n_claims is not None and sum(len(k) for _, k in slots) != n_claims:
        total = sum(len(k) for _, k in slots)
        if total > n_claims:
            _, ks = max(slots, key=lambda s: len(s[1]))
            ks.pop()
        else:
            _, ks = min(slots, key=lambda s: len(s[1]))
            ks.append(next(k for k in kinds if k not in ks))
    flat = [(a, i) for a, (_, ks) in enumerate(slots) for i in range(len(ks))]
    n_err = round(error_rate * len(flat))
    wrong = set(rng.sample(flat, n_err))
    cases = []
    for a, (company, ks) in enumerate(slots):
        doc_id, fin, people = books[company]
        claims = []
        for i, kind in enumerate(ks):
            is_wrong = (a, i) in wrong
            near = None
            if kind == "computational" and rng.random() < near_miss_rate:
                near = "0.6" if is_wrong else "0.4"
            c = _make_claim(rng, kind, is_wrong, near, company, doc_id, fin, people, "2024")
            c.claim_id = f"c{i}"
            claims.append(c)
        answer = " ".join(c.text + "." for c in claims)
        cases.append(SeededErrorCase(f"a{a:03d}", f"What were the key FY2024 results for {company}?", answer,
                                     company, doc_id, claims))
    fins = {doc_id: fin for doc_id, fin, _ in books.values()}
    fins[restated["id"]] = old
    return FixtureBundle(corpus_jsonl, cases, seed, error_rate, fins)
