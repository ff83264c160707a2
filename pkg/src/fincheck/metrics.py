"""Evaluation harness: hallucination rate, detection and citation scores,
bootstrap intervals, permutation tests, equalized comparisons, scaling."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .claims import ClaimType, make_claim
from .corpus import Corpus, resolve_citation
from .errors import DanglingCitation, EmptyInput, FingerprintMismatch, LabelMismatch, TargetBelowAnchor
from .model import Citation
from .retrieval import EvidenceSet
from .verification import VerdictLabel, VerifierConfig, verify_claims

BLOCK = 1000  # replicates per RNG stream; fixes the split scheme


@dataclass(frozen=True)
class LabeledClaim:
    claim_id: str
    gold_label: VerdictLabel
    predicted_label: VerdictLabel
    claim_type: ClaimType

    def __post_init__(self):
        for name in ("gold_label", "predicted_label"):
            v = getattr(self, name)
            if not isinstance(v, VerdictLabel):
                object.__setattr__(self, name, VerdictLabel(v))
        if not isinstance(self.claim_type, ClaimType):
            object.__setattr__(self, "claim_type", ClaimType(self.claim_type))


@dataclass(frozen=True)
class CIResult:
    point: float
    lower: float
    upper: float
    level: float
    replicates: int

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if not self.lower <= self.point <= self.upper:
            raise ValueError("interval must contain the point estimate")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PRF:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    tp: int
    fp: int
    fn: int
    support: int

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# point metrics

def hal_rate(answers: Iterable) -> float:
    """Micro-averaged percentage of hallucinated claims.

    Each answer is an (h, c) pair or anything with ``hallucinated`` and
    ``total_claims`` attributes."""
    h_sum, c_sum, n = 0, 0, 0
    for a in answers:
        h, c = (a if isinstance(a, tuple) else (a.hallucinated, a.total_claims))
        if c < 1 or not 0 <= h <= c:
            raise ValueError(f"invalid answer counts h={h}, c={c}")
        h_sum += h
        c_sum += c
        n += 1
    if n == 0:
        raise EmptyInput("no answers")
    return float(Fraction(h_sum, c_sum) * 100)


def _prf(tp: int, fp: int, fn: int, support: int) -> PRF:
    p = tp / (tp + fp) if tp + fp else None
    r = tp / (tp + fn) if tp + fn else None
    if p is None or r is None:
        f1 = None
    else:
        f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return PRF(p, r, f1, tp, fp, fn, support)


def _counts(claims: Sequence[LabeledClaim]) -> tuple[int, int, int]:
    tp = sum(c.gold_label.hallucinated and c.predicted_label.hallucinated for c in claims)
    fp = sum(not c.gold_label.hallucinated and c.predicted_label.hallucinated for c in claims)
    fn = sum(c.gold_label.hallucinated and not c.predicted_label.hallucinated for c in claims)
    return tp, fp, fn


def detection_prf(claims: Sequence[LabeledClaim]) -> dict:
    """Hallucinated is the positive class; undefined ratios are None."""
    if not claims:
        raise EmptyInput("no claims")
    micro = _prf(*_counts(claims), len(claims))
    per_type: dict[str, PRF] = {}
    for t in ClaimType:
        subset = [c for c in claims if c.claim_type is t]
        if subset:
            per_type[t.value] = _prf(*_counts(subset), len(subset))
    defined = {t: m for t, m in per_type.items() if m.f1 is not None}
    weight = sum(m.support for m in defined.values())
    macro = sum(m.f1 * m.support for m in defined.values()) / weight if weight else None
    return {
        "precision": micro.precision, "recall": micro.recall, "f1": micro.f1,
        "micro": micro, "per_type": per_type, "weighted_macro": macro,
    }


def citation_prf(emitted: Sequence[Citation], gold: Sequence[Citation], corpus: Optional[Corpus] = None) -> dict:
    """Set overlap by provenance identity (resolved through ``corpus`` when given)."""
    def key(c):
        if corpus is None:
            return c.key()
        try:
            return resolve_citation(corpus, c)
        except (DanglingCitation, LabelMismatch):
            return ("unresolved", c.key())

    e, g = {key(c) for c in emitted}, {key(c) for c in gold}
    hit = len(e & g)
    return {"CitP": hit / len(e) if e else None, "CitR": hit / len(g) if g else None}


# ---------------------------------------------------------------------------
# resampling

def _streams(seed: int, total: int):
    """(rng, size) blocks spawned from one seed; identical however they are scheduled."""
    n_blocks = max(1, math.ceil(total / BLOCK))
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    for i, child in enumerate(children):
        yield np.random.default_rng(child), min(BLOCK, total - i * BLOCK)


def bootstrap_ci(samples: Sequence[float], statistic: str = "mean", B: int = 10_000, level: float = 0.95,
                 seed: int = 0) -> CIResult:
    """Percentile bootstrap interval for a mean or a proportion."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    if B < 1000:
        raise ValueError("B must be at least 1000")
    if statistic not in ("mean", "proportion"):
        raise ValueError("statistic must be mean or proportion")
    if statistic == "proportion" and not np.isin(x, (0.0, 1.0)).all():
        raise ValueError("proportion samples must be 0/1")
    point = float(x.mean())
    if np.all(x == x[0]):
        return CIResult(point, point, point, level, B)
    reps = np.concatenate([x[rng.integers(0, x.size, (size, x.size))].mean(axis=1) for rng, size in _streams(seed, B)])
    alpha = (1 - level) / 2
    lo, hi = np.quantile(reps, [alpha, 1 - alpha])
    # percentile intervals can exclude a skewed point estimate; widen to keep it inside
    return CIResult(point, min(float(lo), point), max(float(hi), point), level, B)


EXACT_LIMIT = 2**16


def paired_permutation_test(a: Sequence[float], b: Sequence[float], iterations: int = 10_000, seed: int = 0) -> float:
    """Two-sided sign-flip test on paired differences.

    Enumerates every sign pattern exactly when there are at most
    max(iterations, 2**16) of them."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.size != len(b) or d.size < 2:
        raise ValueError("need two paired lists of equal length ≥ 2")
    obs = abs(d.mean())
    eps = 1e-12 * max(1.0, float(np.abs(d).max()))
    if 2 ** d.size <= max(iterations, EXACT_LIMIT):
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=d.size)))
        stats = np.abs(signs @ d) / d.size
        return float(np.mean(stats >= obs - eps))
    hits = 0
    for rng, size in _streams(seed, iterations):
        signs = rng.choice((-1.0, 1.0), size=(size, d.size))
        hits += int(np.sum(np.abs(signs @ d) / d.size >= obs - eps))
    return (1 + hits) / (1 + iterations)


# ---------------------------------------------------------------------------
# retrieval-equalized comparison

@dataclass(frozen=True)
class EqualizedItem:
    query_id: str
    query: str
    claims: tuple[tuple[str, str, str], ...]  # (claim_id, text, gold label)
    evidence: EvidenceSet
    fingerprint: str


def freeze_evidence(pipeline, groups) -> list[EqualizedItem]:
    """Retrieve once per query so every system sees the same evidence.

    ``groups`` yields (query_id, query, [(claim_id, text, gold_label), ...])."""
    items = []
    for qid, query, claims in groups:
        texts = [t for _, t, _ in claims]
        ev = pipeline.evidence_for(texts, query, pipeline.scope(query, " ".join(texts)))
        items.append(EqualizedItem(qid, query, tuple(tuple(c) for c in claims), ev, ev.retrieval_fingerprint))
    return items


def groups_from_cases(cases):
    for case in cases:
        yield case.answer_id, case.query, [(c.claim_id, c.text, c.gold_label) for c in case.claims]


def groups_from_labeled(rows: Sequence[dict]):
    """Group labeled-claims rows by answer; the query defaults to the joined claims."""
    by_answer: dict[str, list[dict]] = {}
    for r in rows:
        by_answer.setdefault(r["answer_id"], []).append(r)
    for aid, rs in by_answer.items():
        query = rs[0].get("query") or " ".join(r["claim_text"] for r in rs)
        yield aid, query, [(r["claim_id"], r["claim_text"], r["gold_label"]) for r in rs]


def _system_labels(config: VerifierConfig, items, corpus, nli, library) -> list[LabeledClaim]:
    out = []
    for it in items:
        if it.evidence.recomputed_fingerprint() != it.fingerprint:
            raise FingerprintMismatch(f"evidence for {it.query_id} differs from the recorded fingerprint")
        claims = [make_claim(cid, text, library=library) for cid, text, _ in it.claims]
        outcomes = verify_claims(claims, corpus, it.evidence, nli, library, config)
        for (cid, _, gold), c, o in zip(it.claims, claims, outcomes):
            out.append(LabeledClaim(f"{it.query_id}:{cid}", VerdictLabel(gold), o.verdict, c.claim_type))
    return out


def residual(claims: Sequence[LabeledClaim]) -> list[int]:
    """1 where a hallucinated claim would be passed through as supported."""
    return [int(c.gold_label.hallucinated and not c.predicted_label.hallucinated) for c in claims]


def retrieval_equalized_run(systems: Mapping[str, VerifierConfig], items: Sequence[EqualizedItem], corpus: Corpus,
                            nli, library=None, seed: int = 0, B: int = 10_000, iterations: int = 10_000) -> dict:
    if not items:
        raise EmptyInput("no queries")
    labels = {name: _system_labels(cfg, items, corpus, nli, library) for name, cfg in systems.items()}
    per_system = {}
    for name, claims in labels.items():
        res = residual(claims)
        prf = detection_prf(claims)
        per_system[name] = {
            "hal_rate": 100.0 * sum(res) / len(res),
            "ci": bootstrap_ci(res, "proportion", B, seed=seed).to_json(),
            "f1": prf["f1"],
            "weighted_macro_f1": prf["weighted_macro"],
            "per_type": {t: m.f1 for t, m in prf["per_type"].items()},
        }
        per_system[name]["ci"] = {k: (v * 100 if k in ("point", "lower", "upper") else v)
                                  for k, v in per_system[name]["ci"].items()}
    names = list(systems)
    pairwise = {a: {b: paired_permutation_test(residual(labels[a]), residual(labels[b]), iterations, seed)
                    for b in names if b != a} for a in names}
    return {"per_system": per_system, "pairwise_p": pairwise,
            "fingerprints": {it.query_id: it.fingerprint for it in items}}


def render_table(report: dict) -> str:
    fmt = lambda v: "n/a" if v is None else f"{v:.3f}"
    lines = [f"{'system':<20} {'HalRate%':>9} {'95% CI':>17} {'F1':>7} {'wF1':>7}"]
    for name, s in report["per_system"].items():
        ci = f"[{s['ci']['lower']:.2f}, {s['ci']['upper']:.2f}]"
        lines.append(f"{name:<20} {s['hal_rate']:>9.2f} {ci:>17} {fmt(s['f1']):>7} {fmt(s['weighted_macro_f1']):>7}")
    names = list(report["per_system"])
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            lines.append(f"p({a} vs {b}) = {report['pairwise_p'][a][b]:.4g}")
    return "\n".join(lines)


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# scaling projection

def scaling_projection(anchors: Sequence[tuple[float, float]], targets: Sequence[float]) -> list[float]:
    """Log-scale projection where each doubling past the last anchor adds half
    the previous doubling's gain."""
    (n0, f0), (n1, f1) = anchors
    if not n1 > n0 >= 0 or f1 < f0:
        raise ValueError("anchors need n1 > n0 ≥ 0 and f1 ≥ f0")
    gain = f1 - f0
    out = []
    for n in targets:
        if n < n0:
            raise TargetBelowAnchor(f"target {n} below anchor {n0}")
        if n <= n1:
            out.append(f0 + gain * (n - n0) / (n1 - n0))
            continue
        f, size, g = f1, n1, gain
        while size * 2 <= n:
            g /= 2
            f += g
            size *= 2
        if n > size:
            f += (g / 2) * math.log2(n / size)
        out.append(f)
    return out
