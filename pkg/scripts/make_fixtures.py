"""Write the synthetic corpus, seeded-error suite and labeled claims to a directory."""

import argparse
import json
from pathlib import Path

from fincheck.fixtures import FIXTURE_SEED, generate_fixture_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=FIXTURE_SEED)
    ap.add_argument("--answers", type=int, default=60)
    ap.add_argument("--error-rate", type=float, default=0.3)
    args = ap.parse_args()

    bundle = generate_fixture_corpus(args.seed, n_answers=args.answers, error_rate=args.error_rate)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "corpus.jsonl").write_text(bundle.corpus_jsonl, encoding="utf-8")
    (args.out / "suite.jsonl").write_text(bundle.suite_jsonl(), encoding="utf-8")
    (args.out / "labeled_claims.jsonl").write_text(bundle.labeled_claims_jsonl(), encoding="utf-8")
    queries = "".join(json.dumps({"query": c.query, "answer": c.answer}) + "\n" for c in bundle.cases)
    (args.out / "queries.jsonl").write_text(queries, encoding="utf-8")
    wrong = sum(c.hallucinated for c in bundle.cases)
    print(f"{len(bundle.cases)} answers, {bundle.n_claims} claims, {wrong} planted errors -> {args.out}")


if __name__ == "__main__":
    main()
