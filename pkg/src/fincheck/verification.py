"""Claim-evidence alignment and type-specific verifiers."""

from __future__ import annotations

import enum
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from typing import Callable, Optional, Sequence

from .claims import AtomicClaim, ClaimType, extract_entity, normalize_reg_id, regulatory_ids, regulatory_kb
from .corpus import Chunk, Corpus
from .errors import (
    AmbiguousFormula, BackendUnavailable, DivisionByZero, MissingOperands, UnitMismatch,
)
from .formulas import (
    FormulaTemplate, canonical_metric, default_library, delta_template, growth_template, identify_formula,
    recompute,
)
from .model import Citation, Document, ElementType, ProvenanceTuple, citation_from_provenance, strip_citations
from .numbers import (
    UNSPECIFIED, FiscalPeriod, NumericValue, PeriodKind, Unit, find_numbers, find_periods, fiscal_year,
    format_number, numeric_equal, units_compatible,
)
from .retrieval import EvidenceSet
from .text import contains_phrase, normalize_phrase, word_tokens


class VerdictLabel(str, enum.Enum):
    SUPPORTED = "supported"
    CONTRADICTED = "contradicted"
    UNVERIFIABLE = "unverifiable"

    @property
    def hallucinated(self) -> bool:
        return self is not VerdictLabel.SUPPORTED


@dataclass(frozen=True)
class AlignmentCandidate:
    chunk_id: str
    alignment_score: float
    matched_fields: frozenset[str]


@dataclass(frozen=True)
class ConflictFlag:
    claim_id: str
    competing: tuple[tuple[str, str], ...]  # (rendered value, doc id)
    chosen: str
    reason: str

    def to_json(self) -> dict:
        return {"claim_id": self.claim_id, "competing_evidence": [list(c) for c in self.competing],
                "chosen": self.chosen, "reason": self.reason}


@dataclass(frozen=True)
class VerificationOutcome:
    claim_id: str
    verdict: VerdictLabel
    confidence: float
    explanation: str
    evidence_refs: tuple[ProvenanceTuple, ...] = ()
    recomputed_value: Optional[NumericValue] = None
    evidence_value: Optional[NumericValue] = None  # grounded replacement value, when known
    citations: tuple[Citation, ...] = ()
    missing_operands: frozenset[str] = frozenset()
    needs_reretrieval: bool = False
    degraded: bool = False
    hedged: bool = False
    conflict: Optional[ConflictFlag] = None
    correction: tuple[tuple[str, str], ...] = ()  # (claimed fragment, evidence fragment)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if self.verdict is VerdictLabel.CONTRADICTED and not self.evidence_refs:
            raise ValueError("a contradiction needs evidence")

    def to_json(self) -> dict:
        out = {
            "claim_id": self.claim_id, "verdict": self.verdict.value, "confidence": round(self.confidence, 6),
            "explanation": self.explanation, "evidence_refs": [p.to_json() for p in self.evidence_refs],
            "citations": [c.rendered for c in self.citations],
        }
        if self.recomputed_value is not None:
            out["recomputed_value"] = self.recomputed_value.to_json()
        if self.missing_operands:
            out["missing_operands"] = sorted(self.missing_operands)
        if self.needs_reretrieval:
            out["needs_reretrieval"] = True
        if self.degraded:
            out["degraded"] = True
        if self.hedged:
            out["hedged"] = True
        if self.conflict:
            out["conflict"] = self.conflict.to_json()
        if self.correction:
            out["correction"] = [list(p) for p in self.correction]
        return out


@dataclass(frozen=True)
class VerifierConfig:
    tau: float = 0.35
    numeric_tol: Decimal = Decimal(0)
    computational_tol: Decimal = Decimal("0.005")
    hedge_tol: Decimal = Decimal("0.02")
    weights: tuple[float, float, float, float] = (0.4, 0.3, 0.2, 0.1)  # lexical, value, period, entity
    temporal_overlap: float = 0.75
    strategy: str = "full"  # full | nli_only | always_supported
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.strategy not in ("full", "nli_only", "always_supported"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if abs(sum(self.weights) - 1.0) > 1e-9 or min(self.weights) < 0:
            raise ValueError("alignment weights must be non-negative and sum to 1")

    def tolerance(self, claim: AtomicClaim, derived: bool) -> Decimal:
        if claim.hedged:
            return max(self.hedge_tol, self.computational_tol if derived else self.numeric_tol)
        return self.computational_tol if derived else self.numeric_tol


# ---------------------------------------------------------------------------
# helpers over chunks and documents

def _chunk_period(chunk: Chunk, corpus: Corpus) -> list[FiscalPeriod]:
    if chunk.is_cell:
        return [corpus.cell_of(chunk).period]
    return [p for _, _, p in find_periods(chunk.text)]


def _chunk_values(chunk: Chunk, corpus: Corpus) -> list[NumericValue]:
    if chunk.is_cell:
        v = corpus.cell_of(chunk).parsed
        return [v] if v is not None else []
    return [m.value for m in find_numbers(chunk.text)]


def _entity_matches(entity: str, doc: Document, text: str = "") -> bool:
    if not entity:
        return False
    if text and contains_phrase(text, entity):
        return True
    return any(contains_phrase(n, entity) or contains_phrase(entity, n) for n in doc.entity_names)


def effective_period(claim: AtomicClaim, doc: Document) -> FiscalPeriod:
    """The claim's period, or the document's latest fiscal year when it states none."""
    p = claim.period
    if p.specified:
        return p
    years = [c.period.year for t in doc.tables for row in t.cells for c in row
             if c.period.kind is PeriodKind.FISCAL_YEAR]
    return fiscal_year(max(years)) if years else UNSPECIFIED


def _cell_metric(chunk: Chunk) -> tuple[str, str]:
    return canonical_metric(chunk.cell.row_label), canonical_metric(chunk.cell.col_label)


def _metric_hit(metric: str, chunk: Chunk) -> bool:
    return bool(metric) and metric in _cell_metric(chunk)


def _safe_equal(a: NumericValue, b: NumericValue, tol: Decimal) -> bool:
    try:
        return numeric_equal(a, b, tol)
    except UnitMismatch:
        return False


def render_like(value: NumericValue, template: Optional[NumericValue], rel: Decimal = Decimal("0.001")) -> str:
    """Render ``value`` in the style of ``template`` (scale, long words, precision)."""
    if template is None:
        return format_number(value)
    scale = template.scale if value.unit is template.unit or units_compatible(value, template) else value.scale
    if value.unit is Unit.PERCENT or template.unit is not value.unit:
        scale = value.scale
    raw = template.raw_text or ""
    m = re.search(r"\.(\d+)", raw)
    digits = len(m.group(1)) if m else 0
    mant = value.magnitude / scale
    q = mant
    for places in range(max(digits, 1 if abs(mant) < 100 else 0), max(digits + 1, 5)):
        q = round(mant, places)
        if mant == 0 or abs(q - mant) <= rel * abs(mant):
            break
    shown = NumericValue(q * scale, value.unit, scale, value.currency)
    out = format_number(shown, long=bool(re.search(r"illion|thousand", raw, re.I)))
    if value.unit is Unit.RATIO and not re.search(r"x\s*$", raw, re.I):
        out = out[:-1]
    return out


def contradiction_text(evidence: NumericValue, claimed: Optional[NumericValue]) -> str:
    said = render_like(claimed, claimed, Decimal(0)) if claimed is not None else "a different value"
    return f"Source says {render_like(evidence, claimed, Decimal(0))} but answer says {said}"


# ---------------------------------------------------------------------------
# alignment

def _operand_phrases(hint: Optional[str]) -> tuple[str, ...]:
    if not hint:
        return ()
    t = next((t for t in default_library() if t.name == hint), None)
    return tuple(a for op in t.operands for a in op.metric_aliases) if t else ()


def alignment_fields(claim: AtomicClaim, chunk: Chunk, corpus: Corpus) -> tuple[float, set[str]]:
    text = strip_citations(claim.text)
    entity = claim.entity or extract_entity(text)
    # the entity has its own field; counting its words again would double-weight it
    claim_words = set(word_tokens(text)) - set(word_tokens(entity)) or set(word_tokens(text))
    chunk_words = set(word_tokens(chunk.text + " " + " ".join(chunk.header_context)))
    if claim.claim_type is ClaimType.ENTITY_ATTRIBUTE and roles_in(text):
        # any stated role answers the role slot, whichever title it names
        claim_words = (claim_words - _ROLE_WORDS - set(_ROLES)) | {"<role>"}
        if roles_in(chunk.text):
            chunk_words.add("<role>")
    lexical = len(claim_words & chunk_words) / len(claim_words) if claim_words else 0.0
    phrases = _operand_phrases(claim.formula_hint)
    if claim.claim_type is ClaimType.COMPARATIVE and claim.numeric and claim.numeric.metric:
        phrases += _aliases(claim.numeric.metric)
    for phrase in phrases:
        # a formula's inputs count as mentions of the derived metric
        if contains_phrase(chunk.text, phrase):
            lexical = 1.0
            break
    matched: set[str] = {"lexical"} if lexical > 0 else set()
    value = claim.numeric.value if claim.numeric else None
    if value is not None:
        vals = _chunk_values(chunk, corpus)
        if any(units_compatible(value, v) for v in vals):
            matched.add("unit")
        if any(_safe_equal(value, v, Decimal(0)) for v in vals):
            matched.add("value")
    doc = corpus.documents[chunk.document_id]
    period = claim.period if claim.period.specified else effective_period(claim, doc)
    if period.specified and any(period.matches(p) for p in _chunk_period(chunk, corpus)):
        matched.add("period")
    if _entity_matches(entity, doc, chunk.text):
        matched.add("entity")
    return lexical, matched


def stub_scorer(claim: AtomicClaim, chunk: Chunk, corpus: Corpus, weights=(0.4, 0.3, 0.2, 0.1)) -> tuple[float, frozenset]:
    lexical, matched = alignment_fields(claim, chunk, corpus)
    wl, wv, wp, we = weights
    score = wl * lexical + wv * ("value" in matched) + wp * ("period" in matched) + we * ("entity" in matched)
    return min(1.0, score), frozenset(matched)


Scorer = Callable[[AtomicClaim, Chunk, Corpus], tuple[float, frozenset]]


def align_claim(claim: AtomicClaim, evidence: EvidenceSet, corpus: Corpus, scorer: Optional[Scorer] = None,
                tau: float = 0.35) -> list[AlignmentCandidate]:
    scorer = scorer or stub_scorer
    out = []
    for cid in dict.fromkeys(evidence.chunk_ids):
        chunk = corpus.chunks.get(cid)
        if chunk is None:
            continue
        score, fields = scorer(claim, chunk, corpus)
        if score >= tau:
            out.append(AlignmentCandidate(cid, round(score, 12), fields))
    return sorted(out, key=lambda c: (-c.alignment_score, c.chunk_id))


# ---------------------------------------------------------------------------
# conflicts

@dataclass(frozen=True)
class ConflictCandidate:
    value: NumericValue
    provenance: ProvenanceTuple
    filing_date: date


def resolve_conflict(candidates: Sequence[ConflictCandidate], claim_id: str = "") -> tuple[ConflictCandidate, ConflictFlag]:
    """Prefer the latest filing; ties go to the larger document id."""
    if len(candidates) < 2:
        raise ValueError("conflict resolution needs at least two candidates")
    ordered = sorted(candidates, key=lambda c: (c.filing_date, c.provenance.document_id), reverse=True)
    chosen = ordered[0]
    if all(numeric_equal(c.value, chosen.value) for c in candidates if units_compatible(c.value, chosen.value)) \
            and len({c.filing_date for c in candidates}) == 1:
        reason = "duplicate"
    elif ordered[1].filing_date == chosen.filing_date:
        reason = "date-tie"
    else:
        reason = "most-recent-filing"
    flag = ConflictFlag(claim_id, tuple((format_number(c.value), c.provenance.document_id) for c in ordered),
                        chosen.provenance.document_id, reason)
    return chosen, flag


# ---------------------------------------------------------------------------
# numerical

def _unverifiable(claim: AtomicClaim, why: str, confidence: float = 1.0, **kw) -> VerificationOutcome:
    return VerificationOutcome(claim.claim_id, VerdictLabel.UNVERIFIABLE, confidence, why, hedged=claim.hedged, **kw)


def _citations(provs) -> tuple[Citation, ...]:
    # table summaries locate a whole table, which neither grammar production can name
    return tuple(citation_from_provenance(p) for p in provs if p.element_type is not ElementType.TABLE)


def _supported(claim, why, confidence, chunks: Sequence[Chunk], **kw) -> VerificationOutcome:
    provs = tuple(dict.fromkeys(c.provenance for c in chunks))
    return VerificationOutcome(claim.claim_id, VerdictLabel.SUPPORTED, confidence, why, provs,
                               citations=_citations(provs), hedged=claim.hedged, **kw)


def _contradicted(claim, why, confidence, chunks: Sequence[Chunk], **kw) -> VerificationOutcome:
    provs = tuple(dict.fromkeys(c.provenance for c in chunks))
    return VerificationOutcome(claim.claim_id, VerdictLabel.CONTRADICTED, confidence, why, provs,
                               citations=_citations(provs), hedged=claim.hedged, **kw)


def _value_fix(claimed: Optional[NumericValue], evidence: NumericValue,
               rel: Decimal = Decimal(0)) -> tuple[tuple[str, str], ...]:
    # exact-match claims need a lossless rendering; derived ones may round within tolerance
    if claimed is None or not claimed.raw_text:
        return ()
    return ((claimed.raw_text, render_like(evidence, claimed, rel)),)


def verify_numerical(claim: AtomicClaim, candidates: Sequence[AlignmentCandidate], corpus: Corpus,
                     config: VerifierConfig = VerifierConfig()) -> VerificationOutcome:
    value = claim.numeric.value if claim.numeric else None
    if value is None:
        return _unverifiable(claim, "no value to check")
    tol = config.tolerance(claim, derived=False)
    metric = claim.numeric.metric
    entity = claim.entity
    same, conflicting = [], []
    for cand in candidates:
        chunk = corpus.chunks[cand.chunk_id]
        doc = corpus.documents[chunk.document_id]
        period = effective_period(claim, doc)
        if entity and not _entity_matches(entity, doc, chunk.text):
            continue
        if chunk.is_cell:
            cell = corpus.cell_of(chunk)
            if cell.parsed is None or not units_compatible(value, cell.parsed):
                continue
            if not (period.specified and period.matches(cell.period)):
                continue
            if metric and not _metric_hit(metric, chunk):
                continue
            if not metric and not (contains_phrase(claim.text, chunk.cell.row_label)):
                continue
            target = same if _safe_equal(value, cell.parsed, tol) else conflicting
            target.append((cand, chunk, cell.parsed, doc))
        else:
            # prose can support a figure but never overrules a table
            if metric and not any(contains_phrase(chunk.text, a) for a in _aliases(metric)):
                continue
            if period.specified and not any(period.matches(p) for p in _chunk_period(chunk, corpus)):
                continue
            if any(_safe_equal(value, v, tol) for v in _chunk_values(chunk, corpus)):
                same.append((cand, chunk, value, doc))
    table_hits = [h for h in same + conflicting if h[1].is_cell]
    values_differ = {format_number(h[2]) for h in table_hits}
    conflict = None
    if len(values_differ) > 1 and len({h[3].doc_id for h in table_hits}) > 1:
        cc = [ConflictCandidate(h[2], h[1].provenance, h[3].filing_date) for h in table_hits]
        chosen, conflict = resolve_conflict(cc, claim.claim_id)
        pick = next(h for h in table_hits if h[1].provenance == chosen.provenance)
        if _safe_equal(value, pick[2], tol):
            return _supported(claim, f"matches {pick[1].cell.row_label} / {pick[1].cell.col_label} (latest filing)",
                              pick[0].alignment_score, [pick[1]], evidence_value=pick[2], conflict=conflict)
        return _contradicted(claim, contradiction_text(pick[2], value), pick[0].alignment_score, [pick[1]],
                             evidence_value=pick[2], conflict=conflict, correction=_value_fix(value, pick[2]))
    if same:
        best = same[0]
        where = f"{best[1].cell.row_label} / {best[1].cell.col_label}" if best[1].is_cell else "source text"
        return _supported(claim, f"matches {where}", best[0].alignment_score, [best[1]], evidence_value=best[2])
    if conflicting:
        best = conflicting[0]
        return _contradicted(claim, contradiction_text(best[2], value), best[0].alignment_score, [best[1]],
                             evidence_value=best[2], correction=_value_fix(value, best[2]))
    return _unverifiable(claim, "no table cell matches the metric and period",
                         1.0 - (candidates[0].alignment_score if candidates else 0.0), needs_reretrieval=True)


def _aliases(metric: str) -> tuple[str, ...]:
    from .formulas import metric_aliases

    return metric_aliases().get(metric, (metric,))


# ---------------------------------------------------------------------------
# formula reconstruction

def _candidate_docs(claim: AtomicClaim, candidates: Sequence[AlignmentCandidate], corpus: Corpus) -> list[Document]:
    seen: dict[str, Document] = {}
    for cand in candidates:
        d = corpus.documents[corpus.chunks[cand.chunk_id].document_id]
        seen.setdefault(d.doc_id, d)
    for d in corpus.documents_for_entity(claim.entity):
        seen.setdefault(d.doc_id, d)
    docs = list(seen.values())
    if claim.entity:
        docs = [d for d in docs if _entity_matches(claim.entity, d)] or docs
    # most recent filing first; restated figures supersede originals
    return sorted(docs, key=lambda d: (d.filing_date, d.doc_id), reverse=True)


def _find_cell(corpus: Corpus, doc: Document, metric_key: str, aliases: Sequence[str], period: FiscalPeriod,
               evidence_ids: Sequence[str]) -> Optional[Chunk]:
    names = {normalize_phrase(a) for a in aliases}

    def hit(chunk: Chunk) -> bool:
        if not chunk.is_cell or chunk.document_id != doc.doc_id:
            return False
        cell = corpus.cell_of(chunk)
        if cell.parsed is None or not period.matches(cell.period):
            return False
        row = chunk.cell.row_label
        return normalize_phrase(row) in names or (metric_key and canonical_metric(row) == metric_key)

    for cid in evidence_ids:
        ch = corpus.chunks.get(cid)
        if ch is not None and hit(ch):
            return ch
    for t in doc.tables:
        for r in range(t.shape[0]):
            for c in range(t.shape[1]):
                ch = corpus.chunks.get(f"{doc.doc_id}::t::{t.table_id}::r{r}c{c}")
                if ch is not None and hit(ch):
                    return ch
    return None


def fetch_operands(template: FormulaTemplate, claim: AtomicClaim, corpus: Corpus, evidence_ids: Sequence[str],
                   doc: Document) -> dict[str, tuple[NumericValue, Chunk]]:
    period = effective_period(claim, doc)
    found, missing = {}, set()
    for op in template.operands:
        target = period
        if not op.same_period:
            try:
                target = period.shifted(op.period_offset)
            except ValueError:
                target = UNSPECIFIED
        ch = _find_cell(corpus, doc, op.metric, op.metric_aliases, target, evidence_ids) if target.specified else None
        if ch is None:
            missing.add(op.slot_name)
        else:
            found[op.slot_name] = (corpus.cell_of(ch).parsed, ch)
    if missing:
        raise MissingOperands(missing)
    return found


def _reconstruct(template: FormulaTemplate, claim: AtomicClaim, corpus: Corpus, evidence_ids, docs, config):
    """Try each candidate document; returns (recomputed, chunks) or raises the first MissingOperands."""
    first_missing = None
    for doc in docs:
        try:
            ops = fetch_operands(template, claim, corpus, evidence_ids, doc)
        except MissingOperands as exc:
            first_missing = first_missing or exc
            continue
        value = recompute(template, {k: v for k, (v, _) in ops.items()})
        return value, [ch for _, ch in ops.values()]
    raise first_missing or MissingOperands({s for s in template.slot_names})


def judge_recomputed(claim, template, recomputed, chunks, config, score) -> VerificationOutcome:
    claimed = claim.numeric.value if claim.numeric else None
    tol = config.tolerance(claim, derived=True)
    if claimed is None:
        return _unverifiable(claim, f"{template.name} recomputed but no value was claimed",
                             recomputed_value=recomputed, evidence_value=recomputed)
    try:
        ok = numeric_equal(claimed, recomputed, tol)
    except UnitMismatch:
        return _unverifiable(claim, f"claimed unit does not fit {template.name}", recomputed_value=recomputed)
    note = f" (hedged, ±{tol * 100}%)" if claim.hedged else ""
    if ok:
        return _supported(claim, f"{template.name} recomputes to {render_like(recomputed, claimed)}{note}",
                          max(score, 0.5), chunks, recomputed_value=recomputed, evidence_value=recomputed)
    fix = _value_fix(claimed, recomputed, Decimal("0.001"))
    if claim.claim_type is ClaimType.COMPARATIVE and fix:
        fix = _comparative_fix(claim, claimed, recomputed)
    return _contradicted(claim, contradiction_text(recomputed, claimed) + f" ({template.name} recomputed{note})",
                         max(score, 0.5), chunks, recomputed_value=recomputed, evidence_value=recomputed,
                         correction=fix)


_UP_DOWN = {"grew": "declined", "declined": "grew", "increased": "decreased", "decreased": "increased",
            "rose": "fell", "fell": "rose", "up": "down", "down": "up"}


def _comparative_fix(claim, claimed: NumericValue, recomputed: NumericValue) -> tuple[tuple[str, str], ...]:
    """Swap the direction verb when the sign is wrong, then fix the magnitude."""
    pairs = []
    if (claimed.magnitude < 0) != (recomputed.magnitude < 0):
        m = re.search(r"\b(" + "|".join(_UP_DOWN) + r")\b", claim.text)
        if m:
            pairs.append((m.group(1), _UP_DOWN[m.group(1)]))
    shown = recomputed.with_magnitude(abs(recomputed.magnitude))
    pairs.append((claimed.raw_text, render_like(shown, claimed)))
    return tuple(pairs)


def verify_computational(claim: AtomicClaim, candidates: Sequence[AlignmentCandidate], corpus: Corpus,
                         evidence: EvidenceSet, library=None,
                         config: VerifierConfig = VerifierConfig()) -> VerificationOutcome:
    try:
        template = identify_formula(strip_citations(claim.text), library or default_library())
    except AmbiguousFormula as exc:
        return _unverifiable(claim, f"ambiguous formula: {', '.join(exc.names)}")
    if template is None:
        return _unverifiable(claim, "no formula template matches the claim")
    docs = _candidate_docs(claim, candidates, corpus)
    score = candidates[0].alignment_score if candidates else 0.0
    try:
        recomputed, chunks = _reconstruct(template, claim, corpus, evidence.chunk_ids, docs, config)
    except MissingOperands as exc:
        direct = _direct_cell(claim, template, corpus, evidence.chunk_ids, docs)
        if direct is not None:
            return judge_recomputed(claim, template, corpus.cell_of(direct).parsed, [direct], config, score)
        return _unverifiable(claim, f"{template.name}: operands missing: {', '.join(sorted(exc.slots))}",
                             missing_operands=frozenset(exc.slots), needs_reretrieval=True)
    except DivisionByZero:
        return _unverifiable(claim, f"{template.name}: denominator is zero")
    return judge_recomputed(claim, template, recomputed, chunks, config, score)


def _direct_cell(claim, template, corpus, evidence_ids, docs) -> Optional[Chunk]:
    for doc in docs:
        ch = _find_cell(corpus, doc, "", template.output_aliases, effective_period(claim, doc), evidence_ids)
        if ch is not None:
            return ch
    return None


# ---------------------------------------------------------------------------
# generic routes

_ROLES = {
    "ceo": ("ceo", "chief executive officer", "chief executive"),
    "cfo": ("cfo", "chief financial officer"),
    "coo": ("coo", "chief operating officer"),
    "cto": ("cto", "chief technology officer"),
    "cao": ("cao", "chief accounting officer"),
    "chair": ("chair", "chairman", "chairwoman", "chairperson", "chair of the board"),
    "president": ("president",),
    "general_counsel": ("general counsel", "chief legal officer"),
    "treasurer": ("treasurer",),
    "controller": ("controller",),
}
_ROLE_WORDS = {w for names in _ROLES.values() for n in names for w in n.split()}


def roles_in(text: str) -> set[str]:
    return {key for key, names in _ROLES.items() if any(contains_phrase(text, n) for n in names)}


def _names_in(text: str, exclude: Sequence[str]) -> set[str]:
    """Capitalized multi-word runs that are not role words or excluded entities."""
    runs = re.findall(r"\b[A-Z][a-z]+(?:\s+[A-Z]\.)?(?:\s+[A-Z][a-z]+)+\b", text)
    out = set()
    for r in runs:
        words = [w for w in r.split() if w.lower() not in _ROLE_WORDS and w.lower() not in ("the", "of")]
        name = " ".join(words)
        if len(words) >= 2 and not any(contains_phrase(e, name) or contains_phrase(name, e) for e in exclude if e):
            out.add(name)
    return out


def _sentences(text: str) -> list[str]:
    return [s for s in re.split(r"(?<=[.!?])\s+", text) if s.strip()]


def verify_entity_attribute(claim, candidates, corpus, nli) -> Optional[VerificationOutcome]:
    text = strip_citations(claim.text)
    roles = roles_in(text)
    if not roles:
        return None
    companies = [n for d in corpus.documents.values() for n in d.entity_names]
    people = _names_in(text, companies)
    if not people:
        return None
    support, conflict, holder = None, None, None
    for cand in candidates:
        chunk = corpus.chunks[cand.chunk_id]
        for sent in _sentences(chunk.text):
            sent_people = _names_in(sent, companies)
            sent_roles = roles_in(sent)
            if not sent_roles or not sent_people:
                continue
            if people & sent_people and roles & sent_roles and len(sent_people) == 1:
                support = support or (cand, chunk, sent)
            elif people & sent_people and not roles & sent_roles:
                conflict = conflict or (cand, chunk, f"{sorted(people)[0]} holds {', '.join(sorted(sent_roles)).upper()}")
            elif roles & sent_roles and not people & sent_people and len(sent_people) == 1:
                other = next(iter(sent_people))
                holder = holder or other
                conflict = conflict or (cand, chunk, f"the {', '.join(sorted(roles)).upper()} is {other}")
    if support:
        return _supported(claim, "role and person co-occur in the source", support[0].alignment_score, [support[1]])
    if conflict and not holder:
        doc_id = conflict[1].document_id
        for chunk in corpus.chunks.values():
            if chunk.document_id != doc_id or chunk.is_cell:
                continue
            for sent in _sentences(chunk.text):
                sent_people = _names_in(sent, companies)
                if len(sent_people) == 1 and roles & roles_in(sent) and not people & sent_people:
                    holder = holder or next(iter(sent_people))
    if conflict:
        fix = ((sorted(people)[0], holder),) if holder and len(people) == 1 else ()
        return _contradicted(claim, f"Source says {conflict[2]} but answer says {text.strip()}",
                             conflict[0].alignment_score, [conflict[1]], correction=fix)
    return None


def verify_temporal(claim, candidates, corpus, config: VerifierConfig) -> Optional[VerificationOutcome]:
    text = strip_citations(claim.text)
    found = find_periods(text)
    if not found:
        return None
    period = found[0][2]
    masked = text
    for s, e, _ in reversed(found):
        masked = masked[:s] + " " + masked[e:]
    words = set(word_tokens(masked)) - {w.lower() for w in claim.entity.split()}
    if not words:
        return None
    best_match, best_conflict = None, None
    for cand in candidates:
        chunk = corpus.chunks[cand.chunk_id]
        if chunk.is_cell:
            continue
        for sent in _sentences(chunk.text):
            overlap = len(words & set(word_tokens(sent))) / len(words)
            if overlap < config.temporal_overlap:
                continue
            # the event's own date comes first; later periods are comparison bases
            periods = [p for _, _, p in find_periods(sent, period.year)]
            if not periods:
                continue
            if period.matches(periods[0]):
                best_match = best_match or (cand, chunk)
            else:
                best_conflict = best_conflict or (cand, chunk, periods[0])
    if best_match:
        return _supported(claim, f"event dated {period.label()} in the source", best_match[0].alignment_score,
                          [best_match[1]])
    if best_conflict:
        cand, chunk, other = best_conflict
        s, e, _ = found[0]
        return _contradicted(claim, f"Source says {other.label()} but answer says {period.label()}",
                             cand.alignment_score, [chunk], correction=((text[s:e], other.label()),))
    return None


def verify_comparative(claim, candidates, corpus, evidence, config) -> Optional[VerificationOutcome]:
    num = claim.numeric
    if num is None or not num.metric or num.metric not in _metric_keys():
        return None
    cmp = claim.comparison
    docs = _candidate_docs(claim, candidates, corpus)
    if not docs:
        return None
    period = effective_period(claim, docs[0])
    basis = (cmp.basis if cmp and cmp.basis else
             ("prior_quarter" if period.kind is PeriodKind.QUARTER and "quarter" in claim.text.lower() else "prior_year"))
    if num.value is not None and num.value.unit is not Unit.PERCENT:
        template = delta_template(num.metric, num.value.unit, basis)
    else:
        template = growth_template(num.metric, basis)
    try:
        recomputed, chunks = _reconstruct(template, claim, corpus, evidence.chunk_ids, docs, config)
    except (MissingOperands, DivisionByZero):
        return None
    score = candidates[0].alignment_score if candidates else 0.5
    if num.value is None:
        direction = cmp.direction if cmp else 0
        if direction == 0:
            return None
        ok = (recomputed.magnitude > 0) == (direction > 0) and recomputed.magnitude != 0
        word = "rose" if recomputed.magnitude > 0 else "fell"
        if ok:
            return _supported(claim, f"{num.metric} {word} {format_number(recomputed)}", max(score, 0.5), chunks,
                              recomputed_value=recomputed)
        return _contradicted(claim, f"Source says {num.metric} {word} but answer says the opposite",
                             max(score, 0.5), chunks, recomputed_value=recomputed)
    return judge_recomputed(claim, template, recomputed, chunks, config, score)


def _metric_keys():
    from .formulas import metric_aliases

    return metric_aliases()


def verify_regulatory(claim: AtomicClaim) -> VerificationOutcome:
    ids = regulatory_ids(strip_citations(claim.text))
    if not ids:
        return _unverifiable(claim, "no regulatory identifier found")
    kb = regulatory_kb()
    unknown = [i for i in ids if normalize_reg_id(i) not in kb]
    if unknown:
        return _unverifiable(claim, f"not in the regulatory reference list: {', '.join(unknown)}")
    return VerificationOutcome(claim.claim_id, VerdictLabel.SUPPORTED, 1.0,
                               f"found in the regulatory reference list: {', '.join(ids)}", hedged=claim.hedged)


def _nli(claim, candidates, corpus, nli) -> VerificationOutcome:
    chunks = [corpus.chunks[c.chunk_id] for c in candidates]
    try:
        res = nli.judge(strip_citations(claim.text).strip(), [c.text for c in chunks])
    except BackendUnavailable as exc:
        return _unverifiable(claim, f"judge unavailable: {exc}", degraded=True)
    label = VerdictLabel(res.label)
    if label is VerdictLabel.UNVERIFIABLE or not chunks:
        return _unverifiable(claim, "evidence neither supports nor contradicts the claim", res.confidence)
    if label is VerdictLabel.SUPPORTED:
        return _supported(claim, "entailed by the source text", res.confidence, chunks[:1])
    claimed = find_numbers(claim.text)
    for ch in chunks:
        for m in find_numbers(ch.text):
            for c in claimed:
                if units_compatible(c.value, m.value) and not _safe_equal(c.value, m.value, Decimal(0)):
                    return _contradicted(claim, contradiction_text(m.value, c.value), res.confidence, [ch],
                                         evidence_value=m.value, correction=_value_fix(c.value, m.value))
    return _contradicted(claim, f"Source says \"{chunks[0].text[:80]}\" but answer says \"{claim.text.strip()}\"",
                         res.confidence, chunks[:1])


def verify_generic(claim: AtomicClaim, candidates: Sequence[AlignmentCandidate], corpus: Corpus, nli,
                   evidence: Optional[EvidenceSet] = None,
                   config: VerifierConfig = VerifierConfig()) -> VerificationOutcome:
    if claim.claim_type is ClaimType.REGULATORY:
        return verify_regulatory(claim)
    specific = None
    if claim.claim_type is ClaimType.TEMPORAL:
        specific = verify_temporal(claim, candidates, corpus, config)
    elif claim.claim_type is ClaimType.ENTITY_ATTRIBUTE:
        specific = verify_entity_attribute(claim, candidates, corpus, nli)
    elif claim.claim_type is ClaimType.COMPARATIVE:
        specific = verify_comparative(claim, candidates, corpus, evidence or EvidenceSet("", "simple", ()), config)
    return specific or _nli(claim, candidates, corpus, nli)


# ---------------------------------------------------------------------------
# dispatch

def verify_claim(claim: AtomicClaim, corpus: Corpus, evidence: EvidenceSet, nli, library=None,
                 config: VerifierConfig = VerifierConfig(), scorer: Optional[Scorer] = None) -> VerificationOutcome:
    if config.strategy == "always_supported":
        return VerificationOutcome(claim.claim_id, VerdictLabel.SUPPORTED, 1.0, "accepted without checking")
    if claim.claim_type is ClaimType.REGULATORY and config.strategy == "full":
        return verify_regulatory(claim)
    scorer = scorer or (lambda c, ch, co: stub_scorer(c, ch, co, config.weights))
    candidates = align_claim(claim, evidence, corpus, scorer, config.tau)
    if not candidates:
        return _unverifiable(claim, "no evidence aligned above threshold", needs_reretrieval=True)
    if config.strategy == "nli_only":
        return _nli(claim, candidates, corpus, nli)
    if claim.claim_type is ClaimType.NUMERICAL:
        return verify_numerical(claim, candidates, corpus, config)
    if claim.claim_type is ClaimType.COMPUTATIONAL:
        return verify_computational(claim, candidates, corpus, evidence, library, config)
    return verify_generic(claim, candidates, corpus, nli, evidence, config)


def verify_claims(claims: Sequence[AtomicClaim], corpus: Corpus, evidence: EvidenceSet, nli, library=None,
                  config: VerifierConfig = VerifierConfig(), scorer: Optional[Scorer] = None) -> list[VerificationOutcome]:
    """One outcome per claim, in claim order."""
    def run(c):
        return verify_claim(c, corpus, evidence, nli, library, config, scorer)

    if config.workers > 1 and len(claims) > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            return list(pool.map(run, claims))
    return [run(c) for c in claims]
