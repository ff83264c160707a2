"""Span-level repair of unsupported claims, with inline citations."""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

from .claims import AtomicClaim
from .corpus import Corpus, resolve_citation
from .errors import (
    BackendUnavailable, DanglingCitation, LabelMismatch, MalformedBackendOutput, NoEvidenceAvailable,
    PreconditionViolation, SpanNotFound,
)
from .model import find_citations, strip_citations
from .verification import ConflictCandidate, VerdictLabel, VerificationOutcome, resolve_conflict

__all__ = [
    "SpanLocation", "ClaimAction", "GroundedAnswer", "Replacement", "ClaimChecker", "locate_span",
    "regenerate_claim", "resolve_conflict", "ConflictCandidate", "apply_regeneration", "remove_spans",
    "FLAG_PREFIX", "MAX_SPAN_DISTANCE",
]

MAX_SPAN_DISTANCE = 3
FLAG_PREFIX = "⚠ removed unverifiable claim: "
_EDGE_PUNCT = ".,;:!?\"'()"


@dataclass(frozen=True)
class SpanLocation:
    start: int
    end: int
    token_edit_distance: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("span must be non-empty")
        if self.token_edit_distance > MAX_SPAN_DISTANCE:
            raise ValueError("span distance above threshold")


@dataclass(frozen=True)
class ClaimAction:
    claim_id: str
    action: str  # kept | replaced | removed | flagged
    citations: tuple[str, ...] = ()
    note: str = ""

    def to_json(self) -> dict:
        out = {"claim_id": self.claim_id, "action": self.action}
        if self.citations:
            out["citations"] = list(self.citations)
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class GroundedAnswer:
    final_text: str
    mode: str  # incremental | full_regen | flag_only
    per_claim: list[ClaimAction]
    conflict_flags: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    @property
    def citations(self) -> list[str]:
        return [c for a in self.per_claim for c in a.citations]

    def to_json(self) -> dict:
        return {"final_text": self.final_text, "mode": self.mode,
                "per_claim": [a.to_json() for a in self.per_claim],
                "conflict_flags": self.conflict_flags, "failures": self.failures}


@dataclass(frozen=True)
class Replacement:
    text: str
    citations: tuple[str, ...]
    outcome: Optional[VerificationOutcome] = None
    unchanged: bool = False


class ClaimChecker(Protocol):
    """Verification hooks the regenerator calls back into."""

    def check(self, claim: AtomicClaim, text: str) -> VerificationOutcome: ...

    def recheck(self, claim: AtomicClaim) -> VerificationOutcome: ...

    def check_answer(self, answer: str) -> tuple[list[AtomicClaim], list[VerificationOutcome]]: ...


# ---------------------------------------------------------------------------
# span location

def _tokens(text: str) -> list[tuple[int, int, str]]:
    out = []
    for m in re.finditer(r"\S+", text):
        s, e = m.start(), m.end()
        while s < e and text[s] in _EDGE_PUNCT:
            s += 1
        while e > s and text[e - 1] in _EDGE_PUNCT:
            e -= 1
        if s < e:
            out.append((s, e, text[s:e].lower()))
    return out


def locate_span(answer: str, claim_text: str, max_distance: int = MAX_SPAN_DISTANCE) -> SpanLocation:
    """Window of ``answer`` with the least token edit distance to ``claim_text``.

    Semi-global alignment: the claim must be consumed entirely, the answer
    window may start and end anywhere. Ties prefer the earliest window."""
    hay = _tokens(strip_citations(answer))
    needle = [t for _, _, t in _tokens(strip_citations(claim_text))]
    if not needle or not hay:
        raise SpanNotFound("empty claim or answer")
    m, n = len(needle), len(hay)
    # cost[j] and origin[j] for the current needle row
    prev = [0] * (n + 1)
    start = list(range(n + 1))
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        cur_start = [0] + [0] * n
        for j in range(1, n + 1):
            sub = prev[j - 1] + (needle[i - 1] != hay[j - 1][2])
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            best = min(sub, dele, ins)
            cur[j] = best
            if best == sub:
                cur_start[j] = start[j - 1]
            elif best == dele:
                cur_start[j] = start[j]
            else:
                cur_start[j] = cur_start[j - 1]
        prev, start = cur, cur_start
    best_j = min(range(1, n + 1), key=lambda j: (prev[j], j))
    dist = prev[best_j]
    if dist > max_distance:
        raise SpanNotFound(f"closest window is {dist} token edits away")
    first = min(start[best_j], best_j - 1)
    return SpanLocation(hay[first][0], hay[best_j - 1][1], dist)


def _span_for(answer: str, claim: AtomicClaim) -> SpanLocation:
    if claim.span:
        s, e = claim.span
        if 0 <= s < e <= len(answer) and strip_citations(answer[s:e]).strip() == strip_citations(claim.text).strip():
            return SpanLocation(s, e, 0)
    return locate_span(answer, claim.text)


# ---------------------------------------------------------------------------
# per-claim repair

def _apply_pairs(text: str, pairs: Sequence[tuple[str, str]]) -> str:
    for old, new in pairs:
        if old in text:
            text = text.replace(old, new, 1)
    return text


def regenerate_claim(claim: AtomicClaim, outcome: VerificationOutcome, corpus: Corpus, backend,
                     checker: Optional[ClaimChecker] = None) -> Replacement:
    """Grounded replacement text for one non-supported claim.

    Unverifiable claims get one targeted re-retrieval through ``checker``;
    every candidate replacement must then re-verify as supported."""
    if outcome.verdict is VerdictLabel.SUPPORTED:
        raise PreconditionViolation(f"{claim.claim_id} is already supported")
    if outcome.verdict is VerdictLabel.UNVERIFIABLE:
        if checker is None:
            raise NoEvidenceAvailable(f"{claim.claim_id}: no evidence and no re-retrieval hook")
        outcome = checker.recheck(claim)
        if outcome.verdict is VerdictLabel.SUPPORTED:
            return Replacement(strip_citations(claim.text).strip(), tuple(c.rendered for c in outcome.citations),
                               outcome, unchanged=True)
        if outcome.verdict is VerdictLabel.UNVERIFIABLE:
            raise NoEvidenceAvailable(f"{claim.claim_id}: re-retrieval found nothing")
    if not outcome.correction or not outcome.citations:
        raise NoEvidenceAvailable(f"{claim.claim_id}: evidence gives no replacement")
    for c in outcome.citations:
        resolve_citation(corpus, c)
    base = _apply_pairs(strip_citations(claim.text).strip(), outcome.correction[:-1])
    old, new = outcome.correction[-1]
    cites = tuple(dict.fromkeys(c.rendered for c in outcome.citations))
    raw = backend.generate("regenerate_claim", {"claim": base, "claimed_text": old, "replacement_value": new,
                                                "citations": list(cites)})
    text = raw.strip().rstrip(".")
    if checker is not None:
        gate = checker.check(claim, text)
        if gate.verdict is not VerdictLabel.SUPPORTED:
            raise NoEvidenceAvailable(f"{claim.claim_id}: replacement failed re-verification ({gate.verdict.value})")
        outcome = gate
    return Replacement(text, cites, outcome)


# ---------------------------------------------------------------------------
# text surgery

def _removal_bounds(text: str, start: int, end: int) -> tuple[int, int]:
    """Grow a claim span to swallow its citations, a dangling conjunction, or
    the whole sentence when the claim was the sentence."""
    masked = strip_citations(text)
    e = end
    while e < len(masked) and (masked[e].isspace() or masked[e] in ",;"):
        if masked[e] in ",;":
            break
        e += 1
    if e < len(masked) and masked[e] == " ":
        e += 1
    sentence_start = start == 0 or re.search(r"[.!?\n]\s*$", masked[:start]) is not None
    if sentence_start:
        m = re.match(r"\s*[.!?]", masked[e:])
        if m:
            e += m.end()
            while e < len(masked) and masked[e] == " ":
                e += 1
            return start, e
        # keep the remainder of the sentence, dropping a leading conjunction
        m = re.match(r"\s*(?:,?\s*(?:and|while|whereas|but)\s+|;\s*)", masked[e:])
        if m:
            e += m.end()
        return start, e
    m = re.search(r"(?:,?\s+(?:and|while|whereas|but)|;)\s*$", masked[:start])
    s = m.start() if m else start
    return s, e


def remove_spans(text: str, spans: Sequence[tuple[int, int]]) -> str:
    """Delete spans right to left, then tidy whitespace."""
    for s, e in sorted(spans, reverse=True):
        s, e = _removal_bounds(text, s, e)
        tail = text[e:]
        if s > 0 and text[s - 1] != " " and tail and not tail.startswith((".", " ", "\n")):
            tail = " " + tail
        text = text[:s] + tail
        text = re.sub(r"^(\s*)([a-z])", lambda m: m.group(1) + m.group(2).upper(), text) if s == 0 else text
    text = re.sub(r"[ \t]{2,}", " ", text)
    text = re.sub(r" +([.,;])", r"\1", text)
    return text.strip()


def _flag_block(texts: Sequence[str]) -> str:
    return "".join(f"\n{FLAG_PREFIX}\"{t}\"" for t in texts)


def _splice(text: str, edits: Sequence[tuple[int, int, str]]) -> str:
    for s, e, new in sorted(edits, key=lambda t: t[0], reverse=True):
        text = text[:s] + new + text[e:]
    return text


def _cover(span: SpanLocation, answer: str) -> tuple[int, int]:
    """Extend a span over citation markers that directly follow it."""
    starts = {s: e for s, e, _ in find_citations(answer)}
    j = end = span.end
    while True:
        k = j
        while k < len(answer) and answer[k] == " ":
            k += 1
        if k not in starts:
            return span.start, end
        j = end = starts[k]


# ---------------------------------------------------------------------------
# orchestration

def apply_regeneration(answer: str, claims: Sequence[AtomicClaim], outcomes: Sequence[VerificationOutcome],
                       corpus: Corpus, backend, mode: str = "auto", threshold: int = 3,
                       checker: Optional[ClaimChecker] = None) -> GroundedAnswer:
    """Repair, regenerate or flag the non-supported claims of ``answer``."""
    if mode not in ("auto", "incremental", "flag_only", "full_regen"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(claims) != len(outcomes):
        raise ValueError("claims and outcomes must align")
    by_id = {o.claim_id: o for o in outcomes}
    bad = [c for c in claims if by_id[c.claim_id].verdict is not VerdictLabel.SUPPORTED]
    conflicts = [o.conflict.to_json() for o in outcomes if o.conflict]
    if not bad:
        out_mode = "flag_only" if mode == "flag_only" else "incremental"
        return GroundedAnswer(answer, out_mode, [ClaimAction(c.claim_id, "kept") for c in claims], conflicts)
    if mode == "flag_only":
        return _flag_only(answer, claims, by_id, conflicts)
    if mode == "full_regen" or (mode == "auto" and len(bad) >= threshold):
        return _full_regen(answer, claims, by_id, corpus, backend, checker, conflicts)
    return _incremental(answer, claims, by_id, corpus, backend, checker, conflicts)


def _locate_all(answer, claims, by_id, actions, flags):
    spans = {}
    for c in claims:
        if by_id[c.claim_id].verdict is VerdictLabel.SUPPORTED:
            continue
        try:
            spans[c.claim_id] = _span_for(answer, c)
        except SpanNotFound as exc:
            warnings.warn(f"{c.claim_id}: {exc}; flagging without removal", stacklevel=3)
            actions[c.claim_id] = ClaimAction(c.claim_id, "flagged", note=str(exc))
            flags.append(strip_citations(c.text).strip())
    return spans


def _flag_only(answer, claims, by_id, conflicts) -> GroundedAnswer:
    actions: dict[str, ClaimAction] = {}
    flags: list[str] = []
    spans = _locate_all(answer, claims, by_id, actions, flags)
    for c in claims:
        if c.claim_id in spans:
            actions[c.claim_id] = ClaimAction(c.claim_id, "removed", note=by_id[c.claim_id].explanation)
            flags.append(strip_citations(c.text).strip())
    text = remove_spans(answer, [(spans[k].start, spans[k].end) for k in spans])
    per = [actions.get(c.claim_id, ClaimAction(c.claim_id, "kept")) for c in claims]
    return GroundedAnswer(text + _flag_block(_ordered(flags, claims)), "flag_only", per, conflicts)


def _ordered(flags, claims):
    order = {strip_citations(c.text).strip(): i for i, c in enumerate(claims)}
    return sorted(dict.fromkeys(flags), key=lambda t: order.get(t, len(order)))


def _repairs(answer, claims, by_id, corpus, backend, checker, actions, flags, failures):
    """Per-claim replacement edits; claims that cannot be repaired are queued for removal."""
    spans = _locate_all(answer, claims, by_id, actions, flags)
    edits, removals = [], []
    for c in claims:
        if c.claim_id not in spans:
            continue
        span = spans[c.claim_id]
        try:
            rep = regenerate_claim(c, by_id[c.claim_id], corpus, backend, checker)
        except (NoEvidenceAvailable, DanglingCitation, LabelMismatch) as exc:
            actions[c.claim_id] = ClaimAction(c.claim_id, "removed", note=str(exc))
            removals.append((span.start, span.end))
            flags.append(strip_citations(c.text).strip())
            continue
        except (BackendUnavailable, MalformedBackendOutput) as exc:
            failures.append({"claim_id": c.claim_id, "error": type(exc).__name__, "detail": str(exc)})
            actions[c.claim_id] = ClaimAction(c.claim_id, "removed", note=f"backend failure: {exc}")
            removals.append((span.start, span.end))
            flags.append(strip_citations(c.text).strip())
            continue
        if rep.unchanged:
            # re-retrieval found support: the original wording stands
            actions[c.claim_id] = ClaimAction(c.claim_id, "kept", note="supported after re-retrieval")
            continue
        s, e = _cover(span, answer)
        edits.append((s, e, rep.text))
        actions[c.claim_id] = ClaimAction(c.claim_id, "replaced", rep.citations)
    return edits, removals


def _incremental(answer, claims, by_id, corpus, backend, checker, conflicts) -> GroundedAnswer:
    actions: dict[str, ClaimAction] = {}
    flags: list[str] = []
    failures: list[dict] = []
    edits, removals = _repairs(answer, claims, by_id, corpus, backend, checker, actions, flags, failures)
    # replacements first (right to left), then removals on the shifted text
    text = answer
    shift_edits = sorted(edits, key=lambda t: t[0], reverse=True)
    mapped_removals = list(removals)
    for s, e, new in shift_edits:
        text = text[:s] + new + text[e:]
        delta = len(new) - (e - s)
        mapped_removals = [(rs + delta if rs >= e else rs, re_ + delta if rs >= e else re_)
                           for rs, re_ in mapped_removals]
    if mapped_removals:
        text = remove_spans(text, mapped_removals)
    per = [actions.get(c.claim_id, ClaimAction(c.claim_id, "kept")) for c in claims]
    return GroundedAnswer(text + _flag_block(_ordered(flags, claims)), "incremental", per, conflicts, failures)


def _full_regen(answer, claims, by_id, corpus, backend, checker, conflicts) -> GroundedAnswer:
    actions: dict[str, ClaimAction] = {}
    flags: list[str] = []
    failures: list[dict] = []
    edits, removals = _repairs(answer, claims, by_id, corpus, backend, checker, actions, flags, failures)
    payload = [{"start": s, "end": e, "text": t} for s, e, t in edits]
    payload += [{"start": s, "end": e, "text": ""} for s, e in (_removal_bounds(answer, *r) for r in removals)]
    try:
        text = backend.generate("regenerate_answer", {"answer": answer, "edits": json.dumps(payload)})
    except (BackendUnavailable, MalformedBackendOutput) as exc:
        failures.append({"claim_id": None, "error": type(exc).__name__, "detail": str(exc)})
        return _incremental(answer, claims, by_id, corpus, backend, checker, conflicts)
    if removals:
        text = remove_spans(text, [])
    if not isinstance(text, str) or not text.strip():
        failures.append({"claim_id": None, "error": "MalformedBackendOutput", "detail": "empty regeneration"})
        return _incremental(answer, claims, by_id, corpus, backend, checker, conflicts)
    # one pass only: residual failures are removed and flagged, never regenerated again
    if checker is not None:
        new_claims, new_outcomes = checker.check_answer(text)
        residual = [(c, o) for c, o in zip(new_claims, new_outcomes) if o.verdict is not VerdictLabel.SUPPORTED]
        if residual:
            spans = []
            for c, _ in residual:
                try:
                    sp = _span_for(text, c)
                    spans.append((sp.start, sp.end))
                except SpanNotFound:
                    pass
                flags.append(strip_citations(c.text).strip())
            text = remove_spans(text, spans)
            failures.extend({"claim_id": c.claim_id, "error": "residual", "detail": o.explanation}
                            for c, o in residual)
    per = [actions.get(c.claim_id, ClaimAction(c.claim_id, "kept")) for c in claims]
    return GroundedAnswer(text + _flag_block(_ordered(flags, claims)), "full_regen", per, conflicts, failures)
