"""Compare verifier strategies on frozen evidence over the synthetic suite."""

import argparse

from fincheck.corpus import Corpus
from fincheck.fixtures import FIXTURE_SEED, generate_fixture_corpus
from fincheck.metrics import freeze_evidence, groups_from_cases, render_table, retrieval_equalized_run
from fincheck.pipeline import Pipeline
from fincheck.verification import VerifierConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=FIXTURE_SEED)
    ap.add_argument("--answers", type=int, default=60)
    ap.add_argument("--error-rate", type=float, default=0.3)
    ap.add_argument("--replicates", type=int, default=10_000)
    ap.add_argument("--iterations", type=int, default=10_000)
    args = ap.parse_args()

    bundle = generate_fixture_corpus(args.seed, n_answers=args.answers, error_rate=args.error_rate)
    pipeline = Pipeline(Corpus.from_jsonl(bundle.corpus_jsonl))
    items = freeze_evidence(pipeline, groups_from_cases(bundle.cases))
    systems = {s: VerifierConfig(strategy=s) for s in ("full", "nli_only", "always_supported")}
    report = retrieval_equalized_run(systems, items, pipeline.corpus, pipeline.providers.nli, pipeline.library,
                                     seed=args.seed, B=args.replicates, iterations=args.iterations)
    print(f"{len(items)} queries, {bundle.n_claims} claims, identical evidence per query")
    print(render_table(report))


if __name__ == "__main__":
    main()
