"""Stage timing percentiles for the stub pipeline over the synthetic suite."""

import argparse
import json
import tempfile
from pathlib import Path

from fincheck.cli import main as cli
from fincheck.fixtures import FIXTURE_SEED, generate_fixture_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=FIXTURE_SEED)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    bundle = generate_fixture_corpus(args.seed)
    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp)
        (d / "corpus.jsonl").write_text(bundle.corpus_jsonl, encoding="utf-8")
        (d / "queries.jsonl").write_text(
            "".join(json.dumps({"query": c.query, "answer": c.answer}) + "\n" for c in bundle.cases), encoding="utf-8")
        if cli(["ingest", str(d / "corpus.jsonl"), str(d / "store")]) != 0:
            raise SystemExit("ingest failed")
        raise SystemExit(cli(["bench", str(d / "queries.jsonl"), "--store", str(d / "store"),
                              "--repeat", str(args.repeat)]))


if __name__ == "__main__":
    main()
