"""Command line: ingest, verify, evaluate, bench, serve."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import FincheckError, SchemaError
from .pipeline import STAGES, PipelineConfig

log = logging.getLogger("fincheck")


def load_config(path: str | None, overrides: dict | None = None) -> PipelineConfig:
    """Read a ``key = value`` file (no section header needed)."""
    values: dict = {}
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string("[fincheck]\n" + Path(path).read_text(encoding="utf-8"))
        values.update(parser["fincheck"])
    if os.environ.get("FINCHECK_SEED"):
        values["seed"] = os.environ["FINCHECK_SEED"]
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig.from_mapping(values)


def _pipeline(args):
    from .service import build_pipeline

    cfg = load_config(args.config, {"seed": args.seed})
    return build_pipeline(cfg, args.store)


def cmd_ingest(args) -> int:
    from .backends import Providers
    from .store import ingest

    cfg = load_config(args.config)
    providers = Providers.from_configs(cfg.embed, cfg.generate, cfg.nli)
    try:
        report = ingest(Path(args.input).read_text(encoding="utf-8"), args.out, providers.embedder,
                        lenient=args.lenient, config=cfg.retrieval())
    except FincheckError as exc:
        print(f"ingest failed: {exc}", file=sys.stderr)
        return 1
    for e in report.errors:
        log.warning("skipped line %s: %s", e["line"], e["detail"])
    print(json.dumps(report.to_json(), indent=2))
    return 0


def cmd_verify(args) -> int:
    p = _pipeline(args)
    response = p.run(args.query, args.answer, args.mode)
    print(json.dumps(response, indent=2, ensure_ascii=False))
    return 0


def _read_labeled(path: str) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        row = json.loads(line)
        for key in ("answer_id", "claim_id", "claim_text", "claim_type", "gold_label"):
            if key not in row:
                raise SchemaError(f"line {lineno}: missing {key!r}")
        rows.append(row)
    if not rows:
        raise SchemaError("empty dataset")
    return rows


def _systems(listing: str) -> dict:
    from .verification import VerifierConfig

    out = {}
    for part in listing.split(","):
        name, _, strategy = part.partition("=")
        strategy = strategy or name
        if name in out:
            raise SchemaError(f"duplicate system name {name!r}")
        out[name] = VerifierConfig(strategy=strategy)
    return out


def evaluate_rows(rows: list[dict], pipeline=None, seed: int = 0, B: int = 10_000) -> dict:
    """Metrics over a labeled dataset; rows without predictions are verified first."""
    from .claims import make_claim
    from .metrics import LabeledClaim, bootstrap_ci, detection_prf, groups_from_labeled, hal_rate
    from .verification import VerdictLabel, verify_claims

    predicted = {r["claim_id"]: r.get("predicted_label") for r in rows}
    if any(v is None for v in predicted.values()):
        if pipeline is None:
            raise SchemaError("rows lack predicted_label and no corpus store was given")
        for qid, query, claims in groups_from_labeled(rows):
            texts = [t for _, t, _ in claims]
            ev = pipeline.evidence_for(texts, query, pipeline.scope(query, " ".join(texts)))
            cs = [make_claim(cid, t, library=pipeline.library) for cid, t, _ in claims]
            for c, o in zip(cs, verify_claims(cs, pipeline.corpus, ev, pipeline.providers.nli, pipeline.library,
                                              pipeline.verifier)):
                predicted[c.claim_id] = o.verdict.value
    labeled = [LabeledClaim(r["claim_id"], r["gold_label"], predicted[r["claim_id"]], r["claim_type"]) for r in rows]
    per_answer: dict[str, list[int]] = {}
    for r, lc in zip(rows, labeled):
        per_answer.setdefault(r["answer_id"], []).append(int(lc.predicted_label.hallucinated))
    prf = detection_prf(labeled)
    flags = [int(lc.predicted_label.hallucinated) for lc in labeled]
    return {
        "claims": len(labeled),
        "hal_rate": hal_rate([(sum(v), len(v)) for v in per_answer.values()]),
        "hal_rate_ci": bootstrap_ci(flags, "proportion", B, seed=seed).to_json() if len(flags) > 1 else None,
        "gold_hal_rate": hal_rate([(sum(VerdictLabel(r["gold_label"]).hallucinated for r in rows
                                        if r["answer_id"] == a), len(v)) for a, v in per_answer.items()]),
        "precision": prf["precision"], "recall": prf["recall"], "f1": prf["f1"],
        "weighted_macro_f1": prf["weighted_macro"],
        "per_type": {t: m.to_json() for t, m in prf["per_type"].items()},
    }


def cmd_evaluate(args) -> int:
    from .metrics import freeze_evidence, groups_from_labeled, render_table, report_json, retrieval_equalized_run

    rows = _read_labeled(args.dataset)
    pipeline = _pipeline(args) if args.store else None
    if args.equalized:
        if pipeline is None:
            raise SchemaError("--equalized needs --store")
        items = freeze_evidence(pipeline, groups_from_labeled(rows))
        report = retrieval_equalized_run(_systems(args.systems), items, pipeline.corpus, pipeline.providers.nli,
                                         pipeline.library, seed=pipeline.config.seed, B=args.replicates,
                                         iterations=args.iterations)
        report["config_hash"] = pipeline.config.config_hash
        text = render_table(report)
        out = report_json(report)
    else:
        report = evaluate_rows(rows, pipeline, seed=args.seed or 0, B=args.replicates)
        if pipeline is not None:
            report["config_hash"] = pipeline.config.config_hash
        text = "\n".join(f"{k:<18} {v}" for k, v in report.items() if not isinstance(v, dict))
        out = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(out + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_bench(args) -> int:
    p = _pipeline(args)
    queries = []
    for line in Path(args.queries).read_text(encoding="utf-8").splitlines():
        if line.strip():
            q = json.loads(line)
            queries.append((q["query"], q.get("answer")))
    timings = {s: [] for s in STAGES}
    totals = []
    for _ in range(args.repeat):
        for query, answer in queries:
            t0 = time.perf_counter()
            r = p.run(query, answer)
            totals.append(time.perf_counter() - t0)
            for s in STAGES:
                timings[s].append(r["stage_timings"][s])
    stage_sum = sum(sum(v) for v in timings.values())
    print(f"{'stage':<14} {'p50 ms':>9} {'p95 ms':>9} {'share':>7}")
    for s in STAGES:
        v = np.array(timings[s]) * 1000
        print(f"{s:<14} {np.percentile(v, 50):>9.2f} {np.percentile(v, 95):>9.2f} {sum(timings[s]) / stage_sum:>7.1%}")
    t = np.array(totals) * 1000
    print(f"{'total':<14} {np.percentile(t, 50):>9.2f} {np.percentile(t, 95):>9.2f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(_pipeline(args), args.override_log), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fincheck", description="Grounded verification for financial answers")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, store=True):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        if store:
            p.add_argument("--store", required=True, help="directory written by `ingest`")

    p = sub.add_parser("ingest", help="parse filings and build indices")
    p.add_argument("input", help="corpus JSONL")
    p.add_argument("out", help="output directory")
    p.add_argument("--lenient", action="store_true", help="skip malformed documents instead of failing")
    common(p, store=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("verify", help="verify (or answer) one query")
    p.add_argument("--query", required=True)
    p.add_argument("--answer")
    p.add_argument("--mode", choices=["auto", "incremental", "flag_only", "full_regen"])
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate", help="metrics over a labeled-claims dataset")
    p.add_argument("dataset")
    p.add_argument("--equalized", action="store_true", help="freeze retrieval and compare systems")
    p.add_argument("--systems", default="full,nli_only,always_supported",
                   help="comma list of name=strategy (strategy: full, nli_only, always_supported)")
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--store")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="stage timing percentiles over a query file")
    p.add_argument("queries", help="JSONL of {query, answer}")
    p.add_argument("--repeat", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--override-log", default="overrides.jsonl")
    common(p)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FincheckError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
