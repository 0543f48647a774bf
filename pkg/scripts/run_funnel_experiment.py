#!/usr/bin/env python3
"""Progressive-vs-flat comparison on the synthetic corpus.

Prints a retrieval-stages table (time cost decomposed per stage, answer
recall at the final cutoff) in the same shape as the funnel reports, one row
per funnel depth plus the flat baselines.
"""

from __future__ import annotations

import argparse
import dataclasses
import time

from funnelrag.config import FunnelConfig
from funnelrag.corpus import build_graph, cluster_documents
from funnelrag.evaluation import UnitResolver, answer_recall, timing_report
from funnelrag.pipeline import (
    build_flat_index,
    build_resources,
    run_batch,
    run_flat,
    traces_to_run,
)
from funnelrag.synthdata import generate


def fmt_row(label, stages, timing, recall):
    cols = "  ".join(f"{s:<18}" for s in stages)
    return f"{label:<22} {cols} {timing:>22}  AR@4 {recall * 100:6.2f}"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=2000)
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    data = generate(n_docs=args.docs, n_queries=args.queries, seed=args.seed)
    base = FunnelConfig()
    t0 = time.monotonic()
    clusters = cluster_documents(data.corpus, build_graph(data.corpus),
                                 base.max_cluster_size)
    resources = build_resources(data.corpus, clusters, base)
    print(f"corpus: {len(data.corpus)} docs -> {len(clusters)} coarse units "
          f"(built in {time.monotonic() - t0:.2f}s)\n")

    resolver = UnitResolver(data.corpus, clusters, base.passage_size)
    queries = [(q.query_id, q.question) for q in data.qa]
    k_eval = base.top_passages

    depth_rows = [
        ("retrieval-only", {"stage_depth": "retrieval-only",
                            "top_clusters": k_eval}),
        ("two-stage", {"stage_depth": "two-stage", "top_clusters": 20,
                       "top_docs": k_eval}),
        ("full funnel", {}),
    ]
    print(f"{'paradigm':<22} {'retrieval':<18}  {'pre-rank':<18}  "
          f"{'post-rank':<18} {'time (r+p+p)':>22}")
    n_coarse = len(clusters)
    for label, overrides in depth_rows:
        config = dataclasses.replace(base, **overrides)
        result = run_batch(queries, config, resources)
        summary = timing_report([t.stage_seconds() for t in result.traces])
        recall = answer_recall(result.run, data.qa, k_eval, resolver.text)
        outs = [f"{n_coarse} -> {config.top_clusters}c"]
        if config.stage_depth != "retrieval-only":
            outs.append(f"-> {config.top_docs}d")
        if config.stage_depth == "full":
            outs.append(f"-> {config.top_passages}p")
        outs += [""] * (3 - len(outs))
        print(fmt_row(f"progressive {label}", outs, summary.render(), recall))

    flat_index, flat_units = build_flat_index(data.corpus, base)
    for label, pool in (("flat single-stage", 0), ("flat + rerank", 400)):
        traces = [run_flat(qid, q, base, flat_index, flat_units,
                           rerank_pool=pool) for qid, q in queries]
        run = traces_to_run(traces)
        summary = timing_report([t.stage_seconds() for t in traces])
        recall = answer_recall(run, data.qa, k_eval, resolver.text)
        stages = [f"{flat_index.doc_count} -> "
                  f"{pool if pool else base.top_passages}p",
                  f"-> {base.top_passages}p" if pool else "", ""]
        print(fmt_row(label, stages, summary.render(), recall))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
