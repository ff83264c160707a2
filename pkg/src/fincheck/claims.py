"""Atomic claim decomposition, typing and structured field extraction."""

from __future__ import annotations

import enum
import json
import re
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Optional

from .errors import AmbiguousFormula, ExtractionIncomplete, MalformedBackendOutput
from .formulas import canonical_metric, derived_aliases, identify_formula, metric_lexicon
from .model import Document, strip_citations
from .numbers import (
    UNSPECIFIED, FiscalPeriod, NumericValue, PeriodKind, find_numbers, find_periods, fiscal_year,
)
from .text import contains_phrase


class ClaimType(str, enum.Enum):
    NUMERICAL = "numerical"
    TEMPORAL = "temporal"
    ENTITY_ATTRIBUTE = "entity_attribute"
    COMPARATIVE = "comparative"
    REGULATORY = "regulatory"
    COMPUTATIONAL = "computational"

    @property
    def label(self) -> str:
        """Display name used on the backend wire."""
        return {"entity_attribute": "Entity-Attribute"}.get(self.value, self.value.capitalize())


@dataclass(frozen=True)
class NumericFields:
    value: Optional[NumericValue]
    period: FiscalPeriod = UNSPECIFIED
    entity: str = ""
    metric: str = ""


@dataclass(frozen=True)
class Comparison:
    direction: int = 0  # +1 up, -1 down, 0 unstated
    basis: Optional[str] = None  # prior_year / prior_quarter


@dataclass(frozen=True)
class AtomicClaim:
    claim_id: str
    text: str
    claim_type: ClaimType
    numeric: Optional[NumericFields] = None
    formula_hint: Optional[str] = None
    span: Optional[tuple[int, int]] = None
    comparison: Optional[Comparison] = None
    hedged: bool = False

    @property
    def period(self) -> FiscalPeriod:
        if self.numeric:
            return self.numeric.period
        found = find_periods(self.text)
        return found[0][2] if found else UNSPECIFIED

    @property
    def entity(self) -> str:
        return self.numeric.entity if self.numeric else extract_entity(self.text)

    def to_json(self) -> dict:
        out = {"claim_id": self.claim_id, "text": self.text, "type": self.claim_type.value,
               "span": list(self.span) if self.span else None, "hedged": self.hedged}
        if self.numeric:
            out["numeric"] = {
                "value": self.numeric.value.to_json() if self.numeric.value else None,
                "period": self.numeric.period.to_json(), "entity": self.numeric.entity,
                "metric": self.numeric.metric,
            }
        if self.formula_hint:
            out["formula_hint"] = self.formula_hint
        return out


# ---------------------------------------------------------------------------
# lexical cues

_REGULATORY_RE = re.compile(
    r"\b(?:SEC\s+)?Rule\s+\d+[A-Za-z]?\d*(?:-\d+[A-Za-z]?)?"
    r"|\bRegulation\s+(?:Best\s+Interest|[A-Z]{1,3}(?:-[A-Z])?)\b"
    r"|\b(?:Section|Item|Article)\s+\d+[A-Za-z]?(?:\([a-z0-9]\))?"
    r"|\b(?:ASC|IFRS|IAS)\s+\d+"
    r"|\b(?:[A-Z][A-Za-z]+[- ])*[A-Z][A-Za-z]+\s+Act\b"
)
_COMPARE_RE = re.compile(
    r"\b(?:higher|lower|more|less|greater|larger|smaller)\s+than\b|\bcompared\s+(?:to|with)\b|\bversus\b|\bvs\.?"
    r"|\brelative\s+to\b|\byear[- ]over[- ]year\b|\byoy\b|\bquarter[- ]over[- ]quarter\b|\bqoq\b"
    r"|\bsequential(?:ly)?\b|\boutpac\w*|\bexceed\w*",
    re.I,
)
_CHANGE_RE = re.compile(
    r"\b(?P<verb>grew|grow[sn]?|increased|decreased|declined|rose|fell|dropped|jumped|improved|expanded|"
    r"contracted|shrank|up|down)\b",
    re.I,
)
_DOWN_WORDS = {"decreased", "declined", "fell", "dropped", "contracted", "shrank", "down", "lower", "less", "smaller"}
_HEDGE_RE = re.compile(r"\b(?:approximately|roughly|about|around|nearly|almost|close\s+to|an\s+estimated)\b|~", re.I)
_ROLE_RE = re.compile(
    r"\b(?:CEO|CFO|COO|CTO|CAO|chief\s+\w+\s+officer|chair(?:man|woman|person)?|president|treasurer|"
    r"secretary|controller|auditor|director|founder|headquarter(?:ed|s)|incorporated|subsidiary|"
    r"independent\s+registered\s+public\s+accounting\s+firm)\b",
    re.I,
)
_TEMPORAL_WORDS = re.compile(r"\b(?:since|until|as\s+of|during|before|after|effective|began|ended|announced)\b", re.I)

_NOT_ENTITY = {
    "the", "a", "an", "its", "our", "we", "per", "in", "during", "total", "revenue", "gross", "net", "operating",
    "sec", "ceo", "cfo", "coo", "cto", "eps", "roe", "roa", "fcf", "fy", "usd", "gaap", "rule", "section",
    "item", "act", "regulation", "q1", "q2", "q3", "q4", "i", "this", "that", "these", "it", "they", "as",
    "quarter", "fiscal", "year", "chief", "financial", "officer", "executive", "operations", "doc", "table",
    "row", "col", "free", "cash", "flow", "current", "quick", "return", "on", "equity", "assets", "debt",
    "cost", "of", "goods", "sold", "sales", "earnings", "share", "margin", "ratio", "compared", "per",
    "year-over-year", "thank", "please", "note", "overall", "however", "additionally", "also", "and",
}
_MONTH_WORDS = {"january", "february", "march", "april", "may", "june", "july", "august", "september",
                "october", "november", "december", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
                "sept", "oct", "nov", "dec"}


@lru_cache(maxsize=None)
def regulatory_kb() -> frozenset[str]:
    raw = json.loads(resources.files("fincheck").joinpath("data/regulatory_kb.json").read_text())
    return frozenset(normalize_reg_id(r) for r in raw)


def normalize_reg_id(text: str) -> str:
    t = re.sub(r"^SEC\s+", "", text.strip(), flags=re.I)
    return re.sub(r"\s+", " ", t).lower()


def regulatory_ids(text: str) -> list[str]:
    return [m.group(0) for m in _REGULATORY_RE.finditer(text)]


def _mask(text: str, spans) -> str:
    chars = list(text)
    for s, e in spans:
        for i in range(s, e):
            chars[i] = " "
    return "".join(chars)


def claim_numbers(text: str):
    """Numeric tokens that are not part of periods or regulatory identifiers."""
    masked = _mask(text, [m.span() for m in _REGULATORY_RE.finditer(text)])
    return find_numbers(masked)


def extract_entity(text: str) -> str:
    """Nearest proper-noun phrase (runs of capitalized words)."""
    text = strip_citations(text)
    text = _mask(text, [m.span() for m in _REGULATORY_RE.finditer(text)])
    words = re.findall(r"[A-Za-z][A-Za-z&.\-]*(?:['’]s?)?|\S", text)
    runs, cur = [], []
    for w in words:
        base = re.sub(r"['’]s?$", "", w).rstrip(".")
        low = base.lower()
        is_cap = base[:1].isupper() and low not in _NOT_ENTITY and low not in _MONTH_WORDS and len(base) > 1
        if is_cap or (cur and base in ("&", "of") and False):
            cur.append(base)
            if w != base and re.search(r"['’]s?$", w):
                runs.append(" ".join(cur))
                cur = []
        else:
            if cur:
                runs.append(" ".join(cur))
                cur = []
    if cur:
        runs.append(" ".join(cur))
    return runs[0] if runs else ""


def extract_metric(text: str) -> str:
    for phrase in metric_lexicon():
        if contains_phrase(text, phrase):
            return canonical_metric(phrase)
    return ""


def is_hedged(text: str) -> bool:
    return bool(_HEDGE_RE.search(text))


# ---------------------------------------------------------------------------
# classification

def classify_claim(claim_text: str, library=None) -> ClaimType:
    """Fixed precedence: computational > comparative > regulatory > numerical
    > temporal > entity_attribute."""
    text = strip_citations(claim_text)
    if any(contains_phrase(text, a) for a in derived_aliases(library)):
        return ClaimType.COMPUTATIONAL
    if _COMPARE_RE.search(text) or (_CHANGE_RE.search(text) and claim_numbers(text)):
        return ClaimType.COMPARATIVE
    if _REGULATORY_RE.search(text):
        return ClaimType.REGULATORY
    if claim_numbers(text):
        return ClaimType.NUMERICAL
    if find_periods(text) or _TEMPORAL_WORDS.search(text):
        return ClaimType.TEMPORAL
    return ClaimType.ENTITY_ATTRIBUTE


def comparison_fields(text: str) -> Comparison:
    low = text.lower()
    direction = 0
    m = _CHANGE_RE.search(text)
    if m:
        direction = -1 if m.group("verb").lower() in _DOWN_WORDS else 1
    elif re.search(r"\b(?:lower|less|smaller)\s+than\b", low):
        direction = -1
    elif re.search(r"\b(?:higher|more|greater|larger)\s+than\b", low):
        direction = 1
    basis = None
    if re.search(r"quarter[- ]over[- ]quarter|\bqoq\b|sequential", low):
        basis = "prior_quarter"
    elif re.search(r"year[- ]over[- ]year|\byoy\b|annual|from (?:the )?prior year|from fy", low):
        basis = "prior_year"
    return Comparison(direction, basis)


def _context_period(doc: Optional[Document]) -> FiscalPeriod:
    if doc is None:
        return UNSPECIFIED
    years = [c.period.year for t in doc.tables for row in t.cells for c in row
             if c.period.kind is PeriodKind.FISCAL_YEAR]
    return fiscal_year(max(years)) if years else UNSPECIFIED


def extract_numeric_fields(claim: AtomicClaim, doc_context: Optional[Document] = None) -> AtomicClaim:
    """Fill value, period, entity and metric from the claim text.

    A numerical or computational claim without any numeric token is
    downgraded (numerical to entity_attribute, computational to comparative)
    with an :class:`ExtractionIncomplete` warning."""
    text = strip_citations(claim.text)
    nums = claim_numbers(text)
    found = find_periods(text)
    period = found[0][2] if found else _context_period(doc_context)
    entity = extract_entity(text)
    if not entity and doc_context is not None:
        entity = doc_context.company or ""
    metric = extract_metric(text)
    value = nums[0].value if nums else None
    if value is None and claim.claim_type in (ClaimType.NUMERICAL, ClaimType.COMPUTATIONAL):
        new_type = ClaimType.ENTITY_ATTRIBUTE if claim.claim_type is ClaimType.NUMERICAL else ClaimType.COMPARATIVE
        warnings.warn(ExtractionIncomplete(f"{claim.claim_id}: no numeric token; treating as {new_type.value}"),
                      stacklevel=2)
        return replace(claim, claim_type=new_type, numeric=NumericFields(None, period, entity, metric),
                       formula_hint=None, comparison=comparison_fields(text))
    comparison = comparison_fields(text) if claim.claim_type is ClaimType.COMPARATIVE else claim.comparison
    if value is not None and comparison and comparison.direction < 0 and value.magnitude > 0:
        value = replace(value, magnitude=-value.magnitude)
    return replace(claim, numeric=NumericFields(value, period, entity, metric), comparison=comparison,
                   hedged=is_hedged(text))


def make_claim(claim_id: str, text: str, span=None, claim_type: Optional[ClaimType] = None,
               doc_context: Optional[Document] = None, library=None) -> AtomicClaim:
    ctype = claim_type or classify_claim(text, library)
    hint = None
    if ctype is ClaimType.COMPUTATIONAL:
        try:
            t = identify_formula(strip_citations(text), library)
            hint = t.name if t else None
        except AmbiguousFormula:
            hint = None
    claim = AtomicClaim(claim_id, text, ctype, formula_hint=hint, span=span, hedged=is_hedged(text))
    if ctype in (ClaimType.NUMERICAL, ClaimType.COMPUTATIONAL, ClaimType.COMPARATIVE):
        with warnings.catch_warnings(record=True) if doc_context is None else _null():
            claim = extract_numeric_fields(claim, doc_context)
    return claim


class _null:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


# ---------------------------------------------------------------------------
# decomposition

_ABBREVIATIONS = {"inc", "corp", "co", "ltd", "vs", "no", "u.s", "e.g", "i.e", "approx", "mr", "ms", "dr",
                  "st", "jr", "sr", "p", "fig", "llc", "plc"}
_BOUNDARY_RE = re.compile(r"[.!?][\"')\]]*\s+|\n+")
_CONJ_RE = re.compile(r",?\s+(?:and|while|whereas|but)\s+|;\s+")
_VERB_RE = re.compile(
    r"\b(?:was|were|is|are|grew|rose|fell|declined|increased|decreased|reached|totaled|totalled|"
    r"improved|reported|came\s+in|stood|amounted|expanded|contracted|dropped)\b",
    re.I,
)
_FILLER_RE = re.compile(
    r"^\s*(?:thank|thanks|i hope|hope this|let me know|please|feel free|great question|sure|certainly|of course|"
    r"in summary|overall|⚠)",
    re.I,
)


def _sentences(text: str) -> list[tuple[int, int]]:
    spans, start = [], 0
    for m in _BOUNDARY_RE.finditer(text):
        end = m.start() + 1 if text[m.start()] in ".!?" else m.start()
        prev = re.search(r"([A-Za-z.]+)\.$", text[start:m.start() + 1])
        if text[m.start()] == "." and prev and prev.group(1).lower().rstrip(".") in _ABBREVIATIONS:
            continue
        if text[start:end].strip():
            spans.append((start, end))
        start = m.end()
    if text[start:].strip():
        spans.append((start, len(text)))
    return spans


def _trim(text: str, s: int, e: int) -> tuple[int, int]:
    """Shrink a span past surrounding whitespace, trailing punctuation and citations."""
    masked = strip_citations(text)
    while s < e and masked[s].isspace():
        s += 1
    while e > s and (masked[e - 1].isspace() or masked[e - 1] in ".!?;,"):
        e -= 1
    return s, e


def _is_factual(sentence: str) -> bool:
    s = strip_citations(sentence).strip()
    if not s or s.endswith("?") or _FILLER_RE.match(s):
        return False
    if claim_numbers(s) or find_periods(s) or _REGULATORY_RE.search(s) or _ROLE_RE.search(s):
        return True
    if extract_metric(s):
        return True
    return bool(extract_entity(s))


def _split_conjunctions(text: str, s: int, e: int) -> list[tuple[int, int]]:
    masked = strip_citations(text)
    parts, cur = [], s
    for m in _CONJ_RE.finditer(masked, s, e):
        left, right_end = masked[cur:m.start()], e
        nxt = _CONJ_RE.search(masked, m.end(), e)
        right = masked[m.end():nxt.start() if nxt else right_end]
        if claim_numbers(left) and claim_numbers(right) and _VERB_RE.search(right) and _VERB_RE.search(left):
            parts.append((cur, m.start()))
            cur = m.end()
    parts.append((cur, e))
    return parts


def rule_based_decomposition(answer: str) -> list[dict]:
    """Deterministic decomposition in the backend JSON shape, plus spans."""
    out = []
    for s, e in _sentences(answer):
        if not _is_factual(answer[s:e]):
            continue
        for ps, pe in _split_conjunctions(answer, s, e):
            ps, pe = _trim(answer, ps, pe)
            if ps >= pe:
                continue
            claim_text = re.sub(r"\s+", " ", strip_citations(answer[ps:pe])).strip()
            if not claim_text:
                continue
            ctype = classify_claim(claim_text)
            fields: dict = {}
            nums = claim_numbers(claim_text)
            if nums:
                fields["value"] = nums[0].value.raw_text
                fields["unit"] = nums[0].value.unit.value
            periods = find_periods(claim_text)
            if periods:
                fields["time_period"] = periods[0][2].label()
            ent = extract_entity(claim_text)
            if ent:
                fields["entity"] = ent
            if ctype is ClaimType.COMPUTATIONAL:
                try:
                    t = identify_formula(claim_text)
                    if t:
                        fields["formula"] = t.name
                except AmbiguousFormula:
                    pass
            out.append({"claim": claim_text, "type": ctype.label, "structured_fields": fields, "span": [ps, pe]})
    return out


CLAIMS_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["claim", "type"],
        "properties": {
            "claim": {"type": "string", "minLength": 1},
            "type": {"type": "string"},
            "structured_fields": {"type": "object"},
            "span": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        },
    },
}

_TYPE_NAMES = {
    "numerical": ClaimType.NUMERICAL, "temporal": ClaimType.TEMPORAL,
    "entity-attribute": ClaimType.ENTITY_ATTRIBUTE, "entity_attribute": ClaimType.ENTITY_ATTRIBUTE,
    "entity attribute": ClaimType.ENTITY_ATTRIBUTE, "comparative": ClaimType.COMPARATIVE,
    "regulatory": ClaimType.REGULATORY, "computational": ClaimType.COMPUTATIONAL,
}


def parse_claims_json(answer: str, raw: str, doc_context: Optional[Document] = None, library=None) -> list[AtomicClaim]:
    try:
        items = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedBackendOutput(f"decomposition is not JSON: {exc}") from exc
    if not isinstance(items, list):
        raise MalformedBackendOutput("decomposition must be a JSON array")
    claims = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "claim" not in item or "type" not in item:
            raise MalformedBackendOutput(f"claim {i} lacks claim/type")
        ctype = _TYPE_NAMES.get(str(item["type"]).strip().lower())
        if ctype is None:
            raise MalformedBackendOutput(f"claim {i}: unknown type {item['type']!r}")
        text = str(item["claim"]).strip()
        span = tuple(item["span"]) if item.get("span") else None
        if span is None:
            pos = answer.find(text)
            span = (pos, pos + len(text)) if pos >= 0 else None
        claim = make_claim(f"c{i}", text, span, ctype, doc_context, library)
        ent = (item.get("structured_fields") or {}).get("entity")
        if ent and claim.numeric and not claim.numeric.entity:
            claim = replace(claim, numeric=replace(claim.numeric, entity=str(ent)))
        claims.append(claim)
    return claims


def decompose_answer(answer: str, backend, evidence_summary: str = "", doc_context: Optional[Document] = None,
                     library=None) -> list[AtomicClaim]:
    """Ask ``backend`` for the decomposition, validating (and retrying once)."""
    if not answer or not answer.strip():
        raise ValueError("empty answer")
    slots = {"answer": answer, "evidence_summary": evidence_summary}
    last = None
    for _ in range(2):
        try:
            raw = backend.generate("decompose", slots, CLAIMS_SCHEMA)
            return parse_claims_json(answer, raw, doc_context, library)
        except MalformedBackendOutput as exc:
            last = exc
    raise last
