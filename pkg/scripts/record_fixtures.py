#!/usr/bin/env python3
"""Record scoring-protocol fixtures from the seeded synthetic scorers.

Walks the funnel exactly as the engine would against a remote scorer and
writes the request/response pairs as JSONL ({"request": ..., "response":
...}), so a replay server can stand in for a model server byte-for-byte.
A run driven through such a replay endpoint must equal a run using
`synthetic:<seed>` scorers directly.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from funnelrag.chunker import segment_cluster, segment_document
from funnelrag.config import load_config
from funnelrag.corpus import ingest_corpus, read_clusters
from funnelrag.evaluation import load_queries
from funnelrag.pipeline import build_resources
from funnelrag.rank import (
    ScorerHandle,
    pre_rank,
    synthetic_attention_for,
    synthetic_score,
)
from funnelrag.sparse import search


def batches(items, size):
    return [items[i:i + size] for i in range(0, len(items), size)]


def score_fixture(query, batch, seed):
    request = {"query": query,
               "candidates": [{"id": u.unit_id, "text": u.text} for u in batch]}
    response = {"scores": [
        {"id": u.unit_id, "score": synthetic_score(seed, query, u.unit_id)}
        for u in batch]}
    return {"request": {"path": "/score", "body": request},
            "response": response}


def attention_fixture(query, batch, seed):
    request = {"query": query,
               "candidates": [{"id": p.unit_id, "text": p.text} for p in batch]}
    tensors = []
    for p in batch:
        t = synthetic_attention_for(seed, query, p)
        tensors.append({
            "id": p.unit_id,
            "layers": t.layers, "heads": t.heads, "tokens": t.tokens,
            "query_token_mask": [bool(b) for b in t.query_token_mask],
            "scores": t.scores.tolist(),
        })
    return {"request": {"path": "/attention", "body": request},
            "response": {"tensors": tensors}}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus", required=True)
    parser.add_argument("--clusters", required=True)
    parser.add_argument("--queries", required=True)
    parser.add_argument("--config")
    parser.add_argument("--seed", type=int, default=0)
    # must match the engine's remote batch size for byte-stable replay
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    config = load_config(args.config)
    corpus = ingest_corpus(args.corpus)
    clusters = read_clusters(args.clusters)
    resources = build_resources(corpus, clusters, config)
    synthetic = ScorerHandle(kind="synthetic", seed=args.seed)

    fixtures = []
    for qid, question in sorted(load_queries(args.queries)):
        cluster_hits = search(resources.index, question, config.top_clusters)
        doc_units = []
        for hit in cluster_hits:
            doc_units.extend(
                segment_cluster(resources.cluster_by_id(hit.unit_id), corpus))
        if not doc_units:
            continue
        for batch in batches(doc_units, args.batch_size):
            fixtures.append(score_fixture(question, batch, args.seed))
        doc_hits = pre_rank(synthetic, question, doc_units, config.top_docs)
        by_id = {u.unit_id: u for u in doc_units}
        passages = []
        for hit in doc_hits:
            passages.extend(segment_document(by_id[hit.unit_id],
                                             config.passage_size))
        for batch in batches(passages, args.batch_size):
            fixtures.append(attention_fixture(question, batch, args.seed))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for fixture in fixtures:
            fh.write(json.dumps(fixture, ensure_ascii=False) + "\n")
    print(f"recorded {len(fixtures)} protocol fixtures -> {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
