#!/usr/bin/env python3
"""Generate the seeded synthetic corpus and its query sets as JSONL files."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from funnelrag.corpus import write_corpus
from funnelrag.synthdata import generate


def write_qa(items, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps({"query_id": item.query_id,
                                 "question": item.question,
                                 "answers": list(item.answers)},
                                ensure_ascii=False) + "\n")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=2000)
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out-dir", default="data/synth")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(n_docs=args.docs, n_queries=args.queries, seed=args.seed)
    write_corpus(data.corpus, out / "corpus.jsonl")
    write_qa(data.qa, out / "qa.jsonl")
    write_qa(data.contrast_qa, out / "qa.contrast.jsonl")
    with open(out / "gold.json", "w", encoding="utf-8") as fh:
        json.dump(data.gold_doc_by_query, fh, indent=2)
    print(f"wrote {len(data.corpus)} docs, {len(data.qa)} queries to {out}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
