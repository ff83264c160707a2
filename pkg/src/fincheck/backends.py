"""Embedding, generation and NLI providers.

Every provider comes in two flavours: a deterministic offline stub and a
remote client speaking one JSON-over-HTTP protocol (``finground-backend/1``)
where requests carry ``{template_id, slots}``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import httpx
import jsonschema
import numpy as np

from .errors import BackendUnavailable, EmbeddingUnavailable, MalformedBackendOutput
from .numbers import find_numbers, numeric_equal, units_compatible
from .text import tokenize, word_tokens

BACKEND_SCHEMA = "finground-backend/1"
EMBED_DIM = 256

DECOMPOSE_PROMPT = """You are a financial claim verification
assistant. Given a generated answer about
a financial document, decompose it into
atomic, independently verifiable claims.
For each claim:
1. Extract the exact assertion.
2. Classify as: Numerical, Temporal,
   Entity-Attribute, Comparative,
   Regulatory, or Computational.
3. For Numerical: extract value, unit,
   entity, time_period.
4. For Computational: identify the
   implied formula or derivation.

Answer: {answer}
Evidence: {evidence_summary}

Output (JSON): [{{"claim": "...",
  "type": "...",
  "structured_fields": {{...}}}}]"""

REGENERATE_CLAIM_PROMPT = """Rewrite the claim so that it agrees with the evidence.
Keep the wording; change only the value. Append the citations verbatim.

Claim: {claim}
Claimed value: {claimed_text}
Evidence value: {replacement_value}
Citations: {citations}"""

REGENERATE_ANSWER_PROMPT = """Rewrite the answer using only the evidence below.
Apply every listed correction and drop every listed removal; leave other text unchanged.

Answer: {answer}
Edits (JSON): {edits}"""

PROMPT_TEMPLATES = {
    "decompose": DECOMPOSE_PROMPT,
    "regenerate_claim": REGENERATE_CLAIM_PROMPT,
    "regenerate_answer": REGENERATE_ANSWER_PROMPT,
}


def render_prompt(template_id: str, slots: dict) -> str:
    if template_id not in PROMPT_TEMPLATES:
        raise KeyError(f"unregistered template {template_id!r}")
    rendered = {k: v if isinstance(v, str) else json.dumps(v, ensure_ascii=False) for k, v in slots.items()}
    return PROMPT_TEMPLATES[template_id].format(**rendered)


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "stub"
    endpoint: Optional[str] = None
    auth_env: str = "FINCHECK_API_TOKEN"
    timeout: float = 10.0
    retry: int = 1

    def __post_init__(self):
        if self.kind not in ("stub", "remote"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote provider requires an endpoint")
        if self.timeout <= 0 or self.retry < 0:
            raise ValueError("timeout must be positive and retry non-negative")


@dataclass(frozen=True)
class NliResult:
    label: str
    confidence: float


class EmbeddingProvider(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


class GenerationProvider(Protocol):
    is_stub: bool

    def generate(self, template_id: str, slots: dict, schema: Optional[dict] = None) -> str: ...


class NliProvider(Protocol):
    def judge(self, claim: str, evidence_texts: Sequence[str]) -> NliResult: ...


# ---------------------------------------------------------------------------
# stubs

def _bucket(token: str, dim: int) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "big") % dim


class StubEmbedder:
    """Hashed bag-of-tokens, L2-normalized."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dim)
        tokens = tokenize(text) or [text.strip().lower()]
        for tok in tokens:
            vec[_bucket(tok, self.dim)] += 1.0
        return vec / np.linalg.norm(vec)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.embed(t) for t in texts])


def _apply_edits(text: str, edits: list[dict]) -> str:
    for e in sorted(edits, key=lambda e: e["start"], reverse=True):
        text = text[:e["start"]] + e["text"] + text[e["end"]:]
    return text


class StubGenerator:
    """Template-specific deterministic behaviour, no model involved."""

    is_stub = True

    def __init__(self, handlers: Optional[dict[str, Callable[[dict], str]]] = None):
        self.handlers = dict(handlers or {})

    def generate(self, template_id: str, slots: dict, schema: Optional[dict] = None) -> str:
        handler = self.handlers.get(template_id) or _DEFAULT_STUB_HANDLERS.get(template_id)
        if handler is None:
            raise BackendUnavailable(f"stub has no behaviour for template {template_id!r}")
        out = handler(slots)
        if schema is not None:
            _validate_json(out, schema)
        return out


def _stub_decompose(slots: dict) -> str:
    from .claims import rule_based_decomposition

    return json.dumps(rule_based_decomposition(slots["answer"]), ensure_ascii=False)


def _stub_regenerate_claim(slots: dict) -> str:
    claim, old, new = slots["claim"], slots.get("claimed_text") or "", slots["replacement_value"]
    text = claim.replace(old, new, 1) if old and old in claim else claim
    cites = slots.get("citations") or []
    return " ".join([text.rstrip(), *cites])


def _stub_regenerate_answer(slots: dict) -> str:
    edits = slots.get("edits") or []
    if isinstance(edits, str):
        edits = json.loads(edits)
    return _apply_edits(slots["answer"], edits)


_DEFAULT_STUB_HANDLERS = {
    "decompose": _stub_decompose,
    "regenerate_claim": _stub_regenerate_claim,
    "regenerate_answer": _stub_regenerate_answer,
}


class StubNli:
    """Lexical-overlap plus numeric-agreement heuristic."""

    support_overlap = 0.5

    def judge(self, claim: str, evidence_texts: Sequence[str]) -> NliResult:
        if not evidence_texts:
            return NliResult("unverifiable", 1.0)
        claim_words = set(word_tokens(claim))
        claim_nums = [m.value for m in find_numbers(claim)]
        best_support, best_conflict, best_overlap = 0.0, 0.0, 0.0
        for ev in evidence_texts:
            ev_words = set(word_tokens(ev))
            overlap = len(claim_words & ev_words) / len(claim_words) if claim_words else 0.0
            best_overlap = max(best_overlap, overlap)
            if overlap < self.support_overlap:
                continue
            conflict = _numbers_conflict(claim_nums, [m.value for m in find_numbers(ev)])
            if conflict:
                best_conflict = max(best_conflict, overlap)
            else:
                best_support = max(best_support, overlap)
        if best_support:
            return NliResult("supported", round(best_support, 6))
        if best_conflict:
            return NliResult("contradicted", round(best_conflict, 6))
        return NliResult("unverifiable", round(1.0 - best_overlap, 6))


def _numbers_conflict(claim_nums, ev_nums) -> bool:
    """True when the claim states a number that comparable evidence numbers all disagree with."""
    for c in claim_nums:
        peers = [e for e in ev_nums if units_compatible(c, e)]
        if peers and not any(numeric_equal(c, e, 0) for e in peers):
            return True
    return False


# ---------------------------------------------------------------------------
# remote

def _validate_json(text: str, schema: dict):
    try:
        jsonschema.validate(json.loads(text), schema)
    except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise MalformedBackendOutput(str(exc)) from exc


class RemoteClient:
    """One client per endpoint; all providers share the wire protocol."""

    def __init__(self, config: ProviderConfig, transport: Optional[httpx.BaseTransport] = None):
        if config.kind != "remote":
            raise ValueError("RemoteClient needs a remote ProviderConfig")
        self.config = config
        self._client = httpx.Client(timeout=config.timeout, transport=transport)

    def _headers(self) -> dict:
        token = os.environ.get(self.config.auth_env)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def call(self, template_id: str, slots: dict, unavailable=BackendUnavailable):
        body = {"schema": BACKEND_SCHEMA, "template_id": template_id, "slots": slots}
        if template_id in PROMPT_TEMPLATES:
            body["prompt"] = render_prompt(template_id, slots)
        last = None
        for _ in range(self.config.retry + 1):
            try:
                resp = self._client.post(self.config.endpoint, json=body, headers=self._headers())
                resp.raise_for_status()
                payload = resp.json()
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last = exc
                continue
            except (httpx.HTTPStatusError, ValueError) as exc:
                raise unavailable(f"{template_id}: {exc}") from exc
            if not isinstance(payload, dict) or "output" not in payload:
                raise MalformedBackendOutput(f"{template_id}: response lacks 'output'")
            return payload["output"]
        raise unavailable(f"{template_id}: {last!r}")

    def close(self):
        self._client.close()


class RemoteEmbedder:
    def __init__(self, client: RemoteClient):
        self.client = client

    def embed(self, text: str) -> np.ndarray:
        out = self.client.call("embed", {"text": text}, unavailable=EmbeddingUnavailable)
        vec = np.asarray(out, dtype=float)
        norm = np.linalg.norm(vec)
        if vec.ndim != 1 or norm == 0:
            raise MalformedBackendOutput("embedding must be a non-zero vector")
        return vec / norm

    def embed_many(self, texts):
        return np.vstack([self.embed(t) for t in texts])


class RemoteGenerator:
    is_stub = False

    def __init__(self, client: RemoteClient, double_call: bool = False):
        self.client = client
        self.double_call = double_call

    def _once(self, template_id, slots, schema):
        out = self.client.call(template_id, slots)
        if not isinstance(out, str):
            out = json.dumps(out)
        if schema is not None:
            _validate_json(out, schema)
        return out

    def generate(self, template_id: str, slots: dict, schema: Optional[dict] = None) -> str:
        try:
            out = self._once(template_id, slots, schema)
        except MalformedBackendOutput:
            out = self._once(template_id, slots, schema)
        if self.double_call:
            second = self._once(template_id, slots, schema)
            if second != out:
                raise MalformedBackendOutput(f"{template_id}: passes disagree")
        return out


class RemoteNli:
    def __init__(self, client: RemoteClient):
        self.client = client

    def judge(self, claim: str, evidence_texts: Sequence[str]) -> NliResult:
        if not evidence_texts:
            return NliResult("unverifiable", 1.0)
        out = self.client.call("nli", {"claim": claim, "evidence": list(evidence_texts)})
        try:
            label, conf = out["label"], float(out["confidence"])
        except (TypeError, KeyError, ValueError) as exc:
            raise MalformedBackendOutput("nli response needs label and confidence") from exc
        if label not in ("supported", "contradicted", "unverifiable") or not 0 <= conf <= 1:
            raise MalformedBackendOutput(f"bad nli response {out!r}")
        return NliResult(label, conf)


@dataclass
class Providers:
    embedder: EmbeddingProvider
    generator: GenerationProvider
    nli: NliProvider

    @classmethod
    def stubs(cls) -> "Providers":
        return cls(StubEmbedder(), StubGenerator(), StubNli())

    @classmethod
    def from_configs(cls, embed: ProviderConfig, generate: ProviderConfig, nli: ProviderConfig,
                     transport: Optional[httpx.BaseTransport] = None) -> "Providers":
        return cls(
            StubEmbedder() if embed.kind == "stub" else RemoteEmbedder(RemoteClient(embed, transport)),
            StubGenerator() if generate.kind == "stub" else RemoteGenerator(RemoteClient(generate, transport)),
            StubNli() if nli.kind == "stub" else RemoteNli(RemoteClient(nli, transport)),
        )
