"""Retrieve, verify, regenerate: the three-stage request path."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields
from decimal import Decimal
from typing import Optional, Sequence

from .backends import ProviderConfig, Providers, StubGenerator
from .claims import AtomicClaim, decompose_answer, make_claim
from .corpus import Corpus
from .errors import BackendUnavailable, MalformedBackendOutput, RetrievalUnavailable
from .formulas import default_library, identify_formula
from .model import strip_citations
from .regeneration import GroundedAnswer, apply_regeneration
from .retrieval import ComplexityTier, EvidenceSet, RetrievalConfig, Retriever, classify_complexity, interleave
from .text import contains_phrase
from .verification import VerdictLabel, VerificationOutcome, VerifierConfig, verify_claim, verify_claims

API_SCHEMA = "finground-api/1"
STAGES = ("retrieval", "verification", "regeneration")
MODES = ("auto", "incremental", "flag_only", "full_regen")


@dataclass(frozen=True)
class PipelineConfig:
    corpus_path: str = ""
    index_dir: str = ""
    embed: ProviderConfig = field(default_factory=ProviderConfig)
    generate: ProviderConfig = field(default_factory=ProviderConfig)
    nli: ProviderConfig = field(default_factory=ProviderConfig)
    alpha: float = 0.6
    tau: float = 0.35
    k: int = 5
    max_rounds: int = 3
    numeric_tol: str = "0"
    computational_tol: str = "0.005"
    hedge_tol: str = "0.02"
    full_regen_threshold: int = 3
    mode: str = "auto"
    seed: int = 0
    degraded_fallback: bool = True
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.k < 1 or self.max_rounds < 1:
            raise ValueError("k and max_rounds must be positive")
        if self.full_regen_threshold < 1:
            raise ValueError("full_regen_threshold must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("numeric_tol", "computational_tol", "hedge_tol"):
            v = Decimal(getattr(self, name))
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        """Hash of every knob that can change a response (paths excluded)."""
        d = self.to_json()
        for k in ("corpus_path", "index_dir", "workers"):
            d.pop(k)
        for k in ("embed", "generate", "nli"):
            d[k].pop("auth_env", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def verifier(self) -> VerifierConfig:
        return VerifierConfig(tau=self.tau, numeric_tol=Decimal(self.numeric_tol),
                              computational_tol=Decimal(self.computational_tol), hedge_tol=Decimal(self.hedge_tol),
                              workers=self.workers)

    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(alpha=self.alpha, k=self.k, max_rounds=self.max_rounds)

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from flat ``key=value`` pairs (provider keys as ``embed.kind`` etc.)."""
        kw: dict = {}
        providers: dict[str, dict] = {"embed": {}, "generate": {}, "nli": {}}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if "." in key:
                prov, attr = key.split(".", 1)
                if prov not in providers:
                    raise ValueError(f"unknown provider section {prov!r}")
                providers[prov][attr] = raw
                continue
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kw[key] = _coerce(raw, types[key])
        for prov, attrs in providers.items():
            if attrs:
                conv = {"timeout": float, "retry": int}
                kw[prov] = ProviderConfig(**{a: conv.get(a, str)(v) for a, v in attrs.items()})
        return cls(**kw)


def _coerce(raw, type_name):
    if not isinstance(raw, str):
        return raw
    t = str(type_name)
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    if t == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw


# ---------------------------------------------------------------------------


class _Checker:
    """Regeneration callbacks bound to one request's scope."""

    def __init__(self, pipeline: "Pipeline", doc_ids, query: str):
        self.p = pipeline
        self.doc_ids = doc_ids
        self.query = query

    def check(self, claim: AtomicClaim, text: str) -> VerificationOutcome:
        new = make_claim(claim.claim_id, strip_citations(text).strip(), None, claim.claim_type,
                         library=self.p.library)
        ev = self.p.evidence_for([new.text], self.query, self.doc_ids)
        return verify_claim(new, self.p.corpus, ev, self.p.providers.nli, self.p.library, self.p.verifier)

    def recheck(self, claim: AtomicClaim) -> VerificationOutcome:
        ev = self.p.retriever.retrieve(strip_citations(claim.text), ComplexityTier("complex", "re-retrieval"),
                                       2 * self.p.config.k, self.doc_ids, self.p.missing_terms)
        return verify_claim(claim, self.p.corpus, ev, self.p.providers.nli, self.p.library, self.p.verifier)

    def check_answer(self, answer: str):
        if not answer.strip():
            return [], []
        claims, _ = self.p.decompose(answer, "")
        ev = self.p.evidence_for([c.text for c in claims], self.query, self.doc_ids)
        return claims, verify_claims(claims, self.p.corpus, ev, self.p.providers.nli, self.p.library,
                                     self.p.verifier)


class Pipeline:
    def __init__(self, corpus: Corpus, providers: Optional[Providers] = None,
                 config: PipelineConfig = PipelineConfig(), library=None, retriever: Optional[Retriever] = None):
        self.corpus = corpus
        self.providers = providers or Providers.stubs()
        self.config = config
        self.library = library or default_library()
        self.verifier = config.verifier()
        self.retriever = retriever or Retriever(corpus, self.providers.embedder, config.retrieval())

    # -- scope and evidence -------------------------------------------------

    def scope(self, *texts: str) -> Optional[set[str]]:
        """Documents whose company is named in the request; None means all."""
        joined = " ".join(t for t in texts if t)
        hits = {d.doc_id for d in self.corpus.documents.values()
                if any(contains_phrase(joined, n) for n in d.entity_names)}
        return hits or None

    def missing_terms(self, query: str, collected) -> list[str]:
        try:
            t = identify_formula(query, self.library)
        except Exception:
            return []
        if t is None:
            return []
        texts = " ".join(self.corpus.chunks[i.chunk_id].text for i in collected if i.chunk_id in self.corpus.chunks)
        return [op.metric_aliases[0] for op in t.operands
                if not any(contains_phrase(texts, a) for a in op.metric_aliases)]

    def evidence_for(self, texts: Sequence[str], query: str, doc_ids) -> EvidenceSet:
        tier = classify_complexity(query)
        return self.retriever.retrieve_many([query, *texts], query, tier.tier, None, doc_ids, self.missing_terms)

    def decompose(self, answer: str, evidence_summary: str) -> tuple[list[AtomicClaim], bool]:
        """Claims plus whether the rule-based fallback had to stand in for the generator."""
        try:
            return decompose_answer(answer, self.providers.generator, evidence_summary, library=self.library), False
        except (BackendUnavailable, MalformedBackendOutput):
            if not self.config.degraded_fallback:
                raise
            return decompose_answer(answer, StubGenerator(), evidence_summary, library=self.library), True

    def _summary(self, evidence: EvidenceSet, n: int = 3) -> str:
        return "\n".join(self.corpus.chunks[c].text for c in evidence.chunk_ids[:n])

    def _extractive_answer(self, evidence: EvidenceSet) -> str:
        parts = []
        for cid in evidence.chunk_ids[:4]:
            ch = self.corpus.chunks[cid]
            if ch.is_cell:
                row, col, value = ch.text.split(" | ", 2)
                parts.append(f"{row} for {col} was {value}.")
            else:
                parts.append(ch.text if ch.text.endswith(".") else ch.text + ".")
        return " ".join(dict.fromkeys(parts)) or "No supporting information was found."

    # -- request path -------------------------------------------------------

    def run(self, query: str, answer: Optional[str] = None, mode: Optional[str] = None,
            frozen: Optional[EvidenceSet] = None) -> dict:
        mode = mode or self.config.mode
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        timings = {}
        degraded = False
        t0 = time.perf_counter()
        doc_ids = self.scope(query, answer or "")
        evidence = frozen
        if evidence is None:
            base = self.retriever.retrieve(query, None, None, doc_ids, self.missing_terms)
        else:
            base = evidence
        given = answer if answer is not None else self._extractive_answer(base)
        timings["retrieval"] = time.perf_counter() - t0

        t1 = time.perf_counter()
        claims, degraded = self.decompose(given, self._summary(base))
        if evidence is None:
            per_claim = self.evidence_for([c.text for c in claims], query, doc_ids)
            evidence = EvidenceSet(query, per_claim.tier, interleave(base.items + per_claim.items),
                                   rounds=max(base.rounds, per_claim.rounds))
        outcomes = verify_claims(claims, self.corpus, evidence, self.providers.nli, self.library, self.verifier)
        degraded = degraded or any(o.degraded for o in outcomes)
        timings["verification"] = time.perf_counter() - t1

        t2 = time.perf_counter()
        checker = self.checker(query, doc_ids)
        use_mode = "flag_only" if degraded and self.config.degraded_fallback else mode
        try:
            grounded = apply_regeneration(given, claims, outcomes, self.corpus, self.providers.generator, use_mode,
                                          self.config.full_regen_threshold, checker)
        except (BackendUnavailable, MalformedBackendOutput, RetrievalUnavailable):
            if not self.config.degraded_fallback:
                raise
            degraded = True
            grounded = apply_regeneration(given, claims, outcomes, self.corpus, self.providers.generator,
                                          "flag_only", self.config.full_regen_threshold, None)
        timings["regeneration"] = time.perf_counter() - t2
        return self._response(query, answer, given, mode, claims, outcomes, grounded, evidence, timings, degraded)

    def checker(self, query: str, doc_ids: Optional[set[str]] = None) -> "_Checker":
        """Verification callbacks for regenerating answers to ``query``."""
        return _Checker(self, doc_ids if doc_ids is not None else self.scope(query), query)

    def _response(self, query, answer, given, mode, claims, outcomes, grounded: GroundedAnswer, evidence,
                  timings, degraded) -> dict:
        rid_src = json.dumps([self.config.config_hash, self.corpus.corpus_hash, evidence.retrieval_fingerprint,
                              query, given, mode, self.config.seed])
        response_id = hashlib.sha256(rid_src.encode()).hexdigest()[:16]
        claims_json = []
        for c in claims:
            cj = c.to_json()
            cj["claim_id"] = f"{response_id}:{c.claim_id}"
            claims_json.append(cj)
        outs = []
        for o in outcomes:
            oj = o.to_json()
            oj["claim_id"] = f"{response_id}:{o.claim_id}"
            outs.append(oj)
        return {
            "schema": API_SCHEMA,
            "response_id": response_id,
            "query": query,
            "answer": answer,
            "verified_answer": given,
            "mode": mode,
            "grounded_answer": grounded.to_json(),
            "claims": claims_json,
            "outcomes": outs,
            "citations": grounded.citations,
            "verdict_counts": {v.value: sum(o.verdict is v for o in outcomes) for v in VerdictLabel},
            "degraded": degraded,
            "evidence": evidence.to_json(),
            "retrieval_fingerprint": evidence.retrieval_fingerprint,
            "config_hash": self.config.config_hash,
            "corpus_hash": self.corpus.corpus_hash,
            "seed": self.config.seed,
            "stage_timings": {s: round(timings.get(s, 0.0), 6) for s in STAGES},
        }


def canonical_response(response: dict) -> bytes:
    """Response bytes with wall-clock timings removed; the replay comparison key."""
    body = {k: v for k, v in response.items() if k != "stage_timings"}
    return json.dumps(body, sort_keys=True, ensure_ascii=False).encode()


def replay(pipeline: Pipeline, response: dict) -> dict:
    """Re-run a served request and check it reproduces byte-for-byte."""
    if response["config_hash"] != pipeline.config.config_hash:
        raise ValueError("config hash differs from the serving configuration")
    if response["seed"] != pipeline.config.seed:
        raise ValueError("seed differs from the serving configuration")
    again = pipeline.run(response["query"], response["answer"], response["mode"])
    if again["retrieval_fingerprint"] != response["retrieval_fingerprint"]:
        from .errors import FingerprintMismatch

        raise FingerprintMismatch("replayed retrieval differs")
    return again
