"""REST surface over one loaded corpus."""

from __future__ import annotations

import json
import threading
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .backends import Providers
from .corpus import Corpus
from .errors import (
    BackendUnavailable, EmptyCorpus, FincheckError, MalformedBackendOutput, RetrievalUnavailable, SchemaError,
    UnknownClaim,
)
from .pipeline import API_SCHEMA, Pipeline, PipelineConfig
from .retrieval import Retriever
from .verification import VerdictLabel

CONFIDENCE_BINS = 10


class VerifyRequest(BaseModel):
    schema_: Literal["finground-api/1"] = Field(API_SCHEMA, alias="schema")
    query: str = Field(min_length=1)
    answer: Optional[str] = None
    mode: Optional[Literal["auto", "incremental", "flag_only", "full_regen"]] = None


class OverrideRequest(BaseModel):
    schema_: Literal["finground-api/1"] = Field(API_SCHEMA, alias="schema")
    claim_id: str = Field(min_length=1)
    analyst_verdict: Literal["supported", "contradicted", "unverifiable"]
    note: str = ""


class IngestRequest(BaseModel):
    schema_: Literal["finground-api/1"] = Field(API_SCHEMA, alias="schema")
    documents: list[dict]
    lenient: bool = False


class Monitor:
    """Counters and distributions; no alarms."""

    def __init__(self):
        self.lock = threading.Lock()
        self.requests = 0
        self.degraded = 0
        self.claims = 0
        self.overrides = 0
        self.verdicts: Counter = Counter()
        self.confidence = [0] * CONFIDENCE_BINS
        self.override_verdicts: Counter = Counter()

    def record_response(self, response: dict):
        with self.lock:
            self.requests += 1
            self.degraded += int(response["degraded"])
            for o in response["outcomes"]:
                self.claims += 1
                self.verdicts[o["verdict"]] += 1
                self.confidence[min(int(o["confidence"] * CONFIDENCE_BINS), CONFIDENCE_BINS - 1)] += 1

    def record_override(self, verdict: str):
        with self.lock:
            self.overrides += 1
            self.override_verdicts[verdict] += 1

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "schema": API_SCHEMA, "requests": self.requests, "degraded_responses": self.degraded,
                "claims": self.claims, "verdicts": {v.value: self.verdicts[v.value] for v in VerdictLabel},
                "confidence_histogram": list(self.confidence), "overrides": self.overrides,
                "override_rate": self.overrides / self.claims if self.claims else 0.0,
                "override_verdicts": dict(self.override_verdicts),
            }


class OverrideLog:
    """Append-only JSONL; one writer at a time."""

    def __init__(self, path):
        self.path = Path(path)
        self.lock = threading.Lock()

    def append(self, entry: dict):
        with self.lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [json.loads(line) for line in self.path.read_text(encoding="utf-8").splitlines() if line.strip()]


class VerificationService:
    def __init__(self, pipeline: Pipeline, override_log):
        self.pipeline = pipeline
        self.log = OverrideLog(override_log)
        self.monitor = Monitor()
        self.served: dict[str, dict] = {}
        self.rebuild = threading.RLock()  # ingestion excludes serving

    def verify(self, query: str, answer: Optional[str], mode: Optional[str]) -> dict:
        with self.rebuild:
            pipeline = self.pipeline
        response = pipeline.run(query, answer, mode)
        with self.rebuild:
            for o in response["outcomes"]:
                self.served[o["claim_id"]] = o
        self.monitor.record_response(response)
        return response

    def record_override(self, claim_id: str, analyst_verdict: str, note: str = "") -> dict:
        with self.rebuild:
            served = self.served.get(claim_id)
        if served is None:
            raise UnknownClaim(claim_id)
        entry = {"claim_id": claim_id, "analyst_verdict": analyst_verdict, "model_verdict": served["verdict"],
                 "note": note, "timestamp": datetime.now(timezone.utc).isoformat(timespec="microseconds")}
        self.log.append(entry)
        self.monitor.record_override(analyst_verdict)
        return {"schema": API_SCHEMA, "acknowledged": True, **entry}

    def ingest(self, documents: list[dict], lenient: bool) -> dict:
        from .store import parse_jsonl

        text = "\n".join(json.dumps(d) for d in documents)
        docs, errors = parse_jsonl(text, lenient)
        if not docs:
            raise EmptyCorpus("no valid documents to ingest")
        corpus = Corpus.build(docs)
        old = self.pipeline
        with self.rebuild:
            retriever = Retriever(corpus, old.providers.embedder, old.config.retrieval())
            self.pipeline = Pipeline(corpus, old.providers, old.config, old.library, retriever)
            self.served.clear()
        return {"schema": API_SCHEMA, "documents": len(corpus.documents), "chunks": len(corpus.chunks),
                "corpus_hash": corpus.corpus_hash, "errors": errors}


def create_app(pipeline: Pipeline, override_log="overrides.jsonl") -> FastAPI:
    service = VerificationService(pipeline, override_log)
    app = FastAPI(title="fincheck")
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"schema": API_SCHEMA, "error": "SchemaError",
                                                      "detail": json.loads(json.dumps(exc.errors(), default=str))})

    @app.post("/v1/verify")
    def verify(req: VerifyRequest):
        try:
            return service.verify(req.query, req.answer, req.mode)
        except (BackendUnavailable, RetrievalUnavailable, MalformedBackendOutput) as exc:
            raise HTTPException(503, {"error": type(exc).__name__, "detail": str(exc)})
        except (ValueError, SchemaError) as exc:
            raise HTTPException(400, {"error": type(exc).__name__, "detail": str(exc)})

    @app.post("/v1/override")
    def override(req: OverrideRequest):
        try:
            return service.record_override(req.claim_id, req.analyst_verdict, req.note)
        except UnknownClaim as exc:
            raise HTTPException(404, {"error": "UnknownClaim", "detail": str(exc)})

    @app.post("/v1/ingest")
    def ingest(req: IngestRequest):
        try:
            return service.ingest(req.documents, req.lenient)
        except (FincheckError, ValueError) as exc:
            raise HTTPException(400, {"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/v1/health")
    def health():
        p = service.pipeline
        return {"schema": API_SCHEMA, "status": "ok", "corpus_hash": p.corpus.corpus_hash,
                "config_hash": p.config.config_hash, "documents": len(p.corpus.documents)}

    @app.get("/v1/metrics")
    def metrics():
        return service.monitor.snapshot()

    return app


def build_pipeline(config: PipelineConfig, store_dir: str) -> Pipeline:
    from .store import load_store

    providers = Providers.from_configs(config.embed, config.generate, config.nli)
    corpus, retriever = load_store(store_dir, providers.embedder, config.retrieval())
    return Pipeline(corpus, providers, config, retriever=retriever)
