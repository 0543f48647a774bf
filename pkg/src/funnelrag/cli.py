"""Command-line surface for the funnel pipeline.

Exit codes: 0 full success, 2 partial per-query failures, 1 fatal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from funnelrag import bench as bench_mod
from funnelrag import distill as distill_mod
from funnelrag import evaluation as eval_mod
from funnelrag.chunker import (
    Granularity,
    RetrievalUnit,
    cluster_unit,
    passage_doc_id,
    read_units,
    segment_cluster,
    segment_document,
)
from funnelrag.config import load_config, render_config, save_config
from funnelrag.corpus import (
    build_graph,
    cluster_documents,
    ingest_corpus,
    read_clusters,
    write_clusters,
)
from funnelrag.pipeline import (
    Resources,
    build_flat_index,
    build_index,
    run_batch,
    run_flat,
    traces_to_run,
)
from funnelrag.rank import (
    AggregationScheme,
    attention_tensors,
    parse_scorer_spec,
    post_rank_all,
    pre_rank,
)
from funnelrag.runfile import (
    STAGE_POST_RANK,
    STAGE_PRE_RANK,
    STAGE_RETRIEVAL,
    RunFile,
    RunRecord,
    read_run,
    write_run,
)
from funnelrag.sparse import load_index, save_index, search

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


class _CliParser(argparse.ArgumentParser):
    def error(self, message):  # fatal usage errors map to exit code 1
        raise CliError(message)


class CliError(RuntimeError):
    pass


def _cmd_cluster(args) -> int:
    corpus = ingest_corpus(args.corpus)
    graph = build_graph(corpus)
    clusters = cluster_documents(corpus, graph, max_cluster_size=args.max_size)
    write_clusters(clusters, args.out)
    multi = sum(1 for c in clusters if len(c.member_doc_ids) > 1)
    print(f"clustered {len(corpus)} docs into {len(clusters)} units "
          f"({multi} multi-doc) at max size {args.max_size}; "
          f"{corpus.dropped_links} dangling links dropped")
    return EXIT_OK


def _load_units_for_index(args):
    first = None
    with open(args.units, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                first = json.loads(line)
                break
    if first is None:
        return []
    if "cluster_id" in first:
        if not args.corpus:
            raise CliError("--corpus is required when indexing a clusters file")
        corpus = ingest_corpus(args.corpus)
        clusters = read_clusters(args.units)
        return [cluster_unit(c, corpus) for c in clusters]
    return read_units(args.units)


def _cmd_index(args) -> int:
    units = _load_units_for_index(args)
    index = build_index(units, k1=args.k1, b=args.b)
    save_index(index, args.out, postings_format=args.postings_format)
    print(f"indexed {index.doc_count} units, vocab {len(index.vocabulary)}, "
          f"avg length {index.avg_length:.1f} -> {args.out}")
    return EXIT_OK


def _cmd_retrieve(args) -> int:
    index = load_index(args.index)
    queries = eval_mod.load_queries(args.queries)
    records = []
    started = time.monotonic()
    for qid, question in sorted(queries):
        for hit in search(index, question, top_k=args.top_k):
            records.append(RunRecord(
                query_id=qid, unit_id=hit.unit_id,
                granularity=Granularity(args.granularity_level),
                rank=hit.rank, score=hit.score, stage=STAGE_RETRIEVAL))
    elapsed = time.monotonic() - started
    run = RunFile(records=records,
                  timings={STAGE_RETRIEVAL: elapsed / max(len(queries), 1)})
    write_run(run, args.out, include_timings=not args.no_timing_header)
    print(f"retrieved top-{args.top_k} for {len(queries)} queries -> {args.out}")
    return EXIT_OK


def _cmd_pre_rank(args) -> int:
    scorer = parse_scorer_spec(args.scorer)
    run_in = read_run(args.in_path)
    corpus = ingest_corpus(args.corpus)
    clusters = {c.cluster_id: c for c in read_clusters(args.clusters)}
    questions = dict(eval_mod.load_queries(args.queries))

    records = []
    timings = []
    for qid in run_in.queries():
        if qid not in questions:
            raise CliError(f"query {qid!r} missing from {args.queries}")
        cluster_hits = run_in.for_query_stage(qid, STAGE_RETRIEVAL)
        doc_units = []
        for rec in cluster_hits:
            if rec.unit_id not in clusters:
                raise CliError(f"cluster {rec.unit_id!r} missing from {args.clusters}")
            doc_units.extend(segment_cluster(clusters[rec.unit_id], corpus))
        t0 = time.monotonic()
        hits = pre_rank(scorer, questions[qid], doc_units, top_n=args.top_n) \
            if doc_units else []
        timings.append(time.monotonic() - t0)
        for hit in hits:
            records.append(RunRecord(
                query_id=qid, unit_id=hit.unit_id,
                granularity=Granularity.DOCUMENT,
                rank=hit.rank, score=hit.score, stage=STAGE_PRE_RANK))
    run_out = RunFile(
        records=records,
        timings={STAGE_PRE_RANK: sum(timings) / max(len(timings), 1)})
    write_run(run_out, args.out, include_timings=not args.no_timing_header)
    print(f"pre-ranked {len(run_in.queries())} queries to top-{args.top_n} -> {args.out}")
    return EXIT_OK


def _cmd_post_rank(args) -> int:
    scorer = parse_scorer_spec(args.scorer)
    scheme = AggregationScheme(kind=args.scheme, rep_tokens=args.rep_tokens,
                               include_query_tokens=args.include_query_tokens)
    run_in = read_run(args.in_path)
    corpus = ingest_corpus(args.corpus)
    questions = dict(eval_mod.load_queries(args.queries))

    records = []
    timings = []
    for qid in run_in.queries():
        if qid not in questions:
            raise CliError(f"query {qid!r} missing from {args.queries}")
        doc_hits = run_in.for_query_stage(qid, STAGE_PRE_RANK)
        passages = []
        for rec in doc_hits:
            if rec.unit_id not in corpus:
                raise CliError(f"document {rec.unit_id!r} missing from {args.corpus}")
            doc = corpus[rec.unit_id]
            doc_unit = RetrievalUnit(doc.doc_id, Granularity.DOCUMENT, None,
                                     doc.doc_id, doc.title, doc.text,
                                     doc.token_count)
            passages.extend(segment_document(doc_unit, args.passage_size))
        t0 = time.monotonic()
        if passages:
            tensors = attention_tensors(scorer, questions[qid], passages)
            ranked = post_rank_all(list(zip(passages, tensors)), scheme)
        else:
            ranked = []
        timings.append(time.monotonic() - t0)
        # full scored ranking goes in the run; the top-H cut is the funnel's
        # final selection and downstream cutoffs re-apply it
        for hit in ranked:
            records.append(RunRecord(
                query_id=qid, unit_id=hit.unit_id,
                granularity=Granularity.PASSAGE,
                rank=hit.rank, score=hit.score, stage=STAGE_POST_RANK))
    run_out = RunFile(
        records=records,
        timings={STAGE_POST_RANK: sum(timings) / max(len(timings), 1)})
    write_run(run_out, args.out, include_timings=not args.no_timing_header)
    print(f"post-ranked {len(run_in.queries())} queries "
          f"(scheme {args.scheme}, top-{args.top_h} selection) -> {args.out}")
    return EXIT_OK


def _resources_from_args(args, config) -> Resources:
    corpus = ingest_corpus(args.corpus)
    if args.clusters:
        clusters = read_clusters(args.clusters)
    else:
        graph = build_graph(corpus)
        clusters = cluster_documents(corpus, graph, config.max_cluster_size)
    units = [cluster_unit(c, corpus) for c in clusters]
    index = build_index(units, k1=config.k1, b=config.b)
    return Resources(corpus=corpus, clusters=clusters, index=index)


def _cmd_pipeline_run(args) -> int:
    config = load_config(args.config)
    for name in ("top_clusters", "top_docs", "top_passages", "stage_depth",
                 "pre_scorer", "post_scorer"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    config.validate()
    qa_items = eval_mod.load_qa(args.qa) if args.with_answers else None
    queries = eval_mod.load_queries(args.qa)

    if args.paradigm == "flat":
        corpus = ingest_corpus(args.corpus)
        index, passages_by_id = build_flat_index(corpus, config)
        traces = []
        failures = {}
        for qid, question in queries:
            try:
                traces.append(run_flat(qid, question, config, index, passages_by_id,
                                       rerank_pool=args.flat_rerank_pool))
            except Exception as exc:
                logger.error("query %s failed: %s", qid, exc)
                failures[qid] = str(exc)
        run = traces_to_run(traces)
    else:
        resources = _resources_from_args(args, config)
        result = run_batch(queries, config, resources)
        run, traces, failures = result.run, result.traces, result.failures

    write_run(run, args.out, include_timings=not args.no_timing_header)
    summary = eval_mod.timing_report([t.stage_seconds() for t in traces])
    print(f"time cost: {summary.render()}")
    if qa_items is not None and traces:
        resolver = _make_resolver(args, config)
        recall = eval_mod.answer_recall(run, qa_items, k=config.top_passages,
                                        unit_text=resolver.text)
        print(f"answer recall@{config.top_passages}: {recall:.4f}")
    if args.traces_out:
        _write_traces(traces, args.traces_out)
    print(f"{len(traces)} queries ok, {len(failures)} failed -> {args.out}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _make_resolver(args, config) -> eval_mod.UnitResolver:
    corpus = ingest_corpus(args.corpus)
    clusters = read_clusters(args.clusters) if getattr(args, "clusters", None) else []
    return eval_mod.UnitResolver(corpus, clusters, passage_size=config.passage_size)


def _write_traces(traces, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps({
                "query_id": trace.query_id,
                "stages": [
                    {"stage": s.stage, "granularity": s.granularity.label,
                     "candidates_in": s.candidates_in, "selected": s.selected,
                     "duration_s": s.duration_s,
                     "ranked": [[h.unit_id, h.score] for h in s.ranked]}
                    for s in trace.stages
                ],
            }, ensure_ascii=False) + "\n")


def _cmd_distill_export(args) -> int:
    pre_run = read_run(args.pre_run)
    post_run = read_run(args.post_run)
    qa = {item.query_id: item for item in eval_mod.load_qa(args.qa)}
    corpus = ingest_corpus(args.corpus)

    pairs = []
    for qid in pre_run.queries():
        if qid not in qa:
            raise CliError(f"query {qid!r} missing from {args.qa}")
        pre_hits = pre_run.for_query_stage(qid, STAGE_PRE_RANK)
        s_pre = {r.unit_id: r.score for r in pre_hits}
        post_hits = post_run.for_query_stage(qid, STAGE_POST_RANK)
        passage_scores = {r.unit_id: r.score for r in post_hits}
        lineage = {pid: passage_doc_id(pid) for pid in passage_scores}
        orphan = set(lineage.values()) - set(s_pre)
        if orphan:
            raise CliError(
                f"query {qid!r}: post-run passages from docs outside the "
                f"pre-run candidate set: {sorted(orphan)[:3]}")
        unscored = set(s_pre) - set(lineage.values())
        if unscored:
            raise CliError(
                f"query {qid!r}: pre-run docs with no scored passages: "
                f"{sorted(unscored)[:3]}")
        aggregated = distill_mod.aggregate_local_to_global(
            passage_scores, lineage, mix_alpha=args.alpha)
        texts = {a.doc_id: corpus[a.doc_id].text for a in aggregated}
        positives, negatives, sources = distill_mod.annotate(
            aggregated, texts, list(qa[qid].answers), top_k_agg=args.topk)
        pairs.extend(distill_mod.export_pairs(
            qid, positives, negatives, sources, s_pre,
            cap=None if args.all_pairs else args.cap))
    distill_mod.write_pairs(pairs, args.out)
    print(f"exported {len(pairs)} distillation pairs for "
          f"{len(pre_run.queries())} queries -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    run = read_run(args.run)
    if args.metric == "em":
        if not args.predictions:
            raise CliError("--metric em requires --predictions")
        qa = {item.query_id: item for item in eval_mod.load_qa(args.qa)}
        total = 0
        matches = 0
        with open(args.predictions, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                qid = str(rec["query_id"])
                if qid not in qa:
                    raise CliError(f"prediction for unknown query {qid!r}")
                total += 1
                if eval_mod.exact_match(str(rec["prediction"]),
                                        qa[qid].answers):
                    matches += 1
        value = matches / total if total else 0.0
        print(f"EM = {value:.4f} ({matches}/{total})")
        return EXIT_OK

    if not args.corpus:
        raise CliError(f"--metric {args.metric} requires --corpus to resolve unit texts")
    qa_items = eval_mod.load_qa(args.qa)
    corpus = ingest_corpus(args.corpus)
    clusters = read_clusters(args.clusters) if args.clusters else []
    resolver = eval_mod.UnitResolver(corpus, clusters,
                                     passage_size=args.passage_size)
    if args.metric == "ar":
        value = eval_mod.answer_recall(run, qa_items, k=args.k,
                                       unit_text=resolver.text, stage=args.stage)
        print(f"AR@{args.k} = {value:.4f}")
    elif args.metric == "entropy":
        report = eval_mod.contextual_entropy(run, k=args.k,
                                             unit_title=resolver.title,
                                             stage=args.stage)
        print(f"entropy@{args.k} = {report.mean_bits:.4f} bits "
              f"({report.queries} queries, {report.skipped} skipped)")
    elif args.metric == "curve":
        percents = [float(p) for p in args.percents.split(",")]
        points = eval_mod.degradation_curve(run, qa_items, percents,
                                            unit_text=resolver.text,
                                            stage=args.stage)
        print("percent\trecall\tdrop_vs_100%")
        for pt in points:
            print(f"{pt.percent:g}\t{pt.recall:.4f}\t{pt.drop_vs_full:.2f}")
    else:
        raise CliError(f"unknown metric {args.metric!r}")
    return EXIT_OK


def _cmd_bench_contrast(args) -> int:
    config = load_config(args.config)
    qa = eval_mod.load_qa(args.qa)
    corpus = ingest_corpus(args.corpus)
    if args.clusters:
        clusters = read_clusters(args.clusters)
    else:
        clusters = cluster_documents(corpus, build_graph(corpus),
                                     config.max_cluster_size)
    units = [cluster_unit(c, corpus) for c in clusters]
    index = build_index(units, k1=config.k1, b=config.b)
    resources = Resources(corpus=corpus, clusters=clusters, index=index)

    percents = [float(p) for p in args.percents.split(",")]
    report = bench_mod.contrast_mode(args.mode, qa, resources,
                                     retrieve_k=args.retrieve_k,
                                     percents=percents)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for arm, run in report.arms.items():
        write_run(run, out_dir / f"{args.mode}.{arm}.run.tsv",
                  include_timings=not args.no_timing_header)
    with open(out_dir / f"{args.mode}.curves.tsv", "w", encoding="utf-8") as fh:
        fh.write("arm\tpercent\trecall\tdrop_vs_100%\n")
        for arm, points in report.curves.items():
            for pt in points:
                fh.write(f"{arm}\t{pt.percent:g}\t{pt.recall!r}\t{pt.drop_vs_full!r}\n")
    for arm, points in report.curves.items():
        line = ", ".join(f"{pt.percent:g}%:{pt.recall:.3f}" for pt in points)
        print(f"{arm}: {line}")
    print(f"contrast runs written under {out_dir}")
    return EXIT_OK


def _cmd_config_render(args) -> int:
    config = load_config(args.config)
    if args.out:
        save_config(config, args.out)
    else:
        sys.stdout.write(render_config(config))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _CliParser(prog="funnelrag",
                        description="coarse-to-fine progressive retrieval")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="build the coarse clustered corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-size", type=int, default=4000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("index", help="build the sparse index over units")
    p.add_argument("--units", required=True,
                   help="units JSONL, or a clusters JSONL plus --corpus")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--postings-format", choices=("binary", "json"), default="binary")
    p.add_argument("--k1", type=float, default=1.5)
    p.add_argument("--b", type=float, default=0.75)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("retrieve", help="sparse top-k retrieval into a run file")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--top-k", type=int, default=80)
    p.add_argument("--out", required=True)
    p.add_argument("--granularity-level", type=int, default=int(Granularity.CLUSTER),
                   help=argparse.SUPPRESS)
    p.add_argument("--no-timing-header", action="store_true")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("pre-rank", help="segment retrieved clusters and rank documents")
    p.add_argument("--scorer", required=True, help="builtin | synthetic:<seed> | URL")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--top-n", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--no-timing-header", action="store_true")
    p.set_defaults(func=_cmd_pre_rank)

    p = sub.add_parser("post-rank", help="segment documents and rank passages")
    p.add_argument("--scorer", required=True, help="builtin | synthetic:<seed> | URL")
    p.add_argument("--scheme", default="mean-rep")
    p.add_argument("--rep-tokens", type=int, default=4)
    p.add_argument("--include-query-tokens", action="store_true")
    p.add_argument("--top-h", type=int, default=4)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--passage-size", type=int, default=100)
    p.add_argument("--no-timing-header", action="store_true")
    p.set_defaults(func=_cmd_post_rank)

    p = sub.add_parser("pipeline", help="end-to-end runs")
    psub = p.add_subparsers(dest="pipeline_command", required=True)
    pr = psub.add_parser("run", help="run the funnel over a query batch")
    pr.add_argument("--config")
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--clusters")
    pr.add_argument("--qa", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--traces-out")
    pr.add_argument("--paradigm", choices=("progressive", "flat"),
                    default="progressive")
    pr.add_argument("--flat-rerank-pool", type=int, default=0)
    pr.add_argument("--stage-depth", dest="stage_depth",
                    choices=("retrieval-only", "two-stage", "full"))
    pr.add_argument("--top-clusters", dest="top_clusters", type=int)
    pr.add_argument("--top-docs", dest="top_docs", type=int)
    pr.add_argument("--top-passages", dest="top_passages", type=int)
    pr.add_argument("--pre-scorer", dest="pre_scorer")
    pr.add_argument("--post-scorer", dest="post_scorer")
    pr.add_argument("--with-answers", action="store_true",
                    help="also evaluate answer recall on the batch")
    pr.add_argument("--no-timing-header", action="store_true")
    pr.set_defaults(func=_cmd_pipeline_run)

    p = sub.add_parser("distill-export", help="export ranking-distillation pairs")
    p.add_argument("--post-run", required=True)
    p.add_argument("--pre-run", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--topk", type=int, default=1)
    p.add_argument("--cap", type=int, default=4)
    p.add_argument("--all-pairs", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_distill_export)

    p = sub.add_parser("eval", help="metrics over a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--metric", required=True, choices=("ar", "em", "entropy", "curve"))
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--percents", default="10,20,40,60,80,100")
    p.add_argument("--stage")
    p.add_argument("--corpus")
    p.add_argument("--clusters")
    p.add_argument("--passage-size", type=int, default=100)
    p.add_argument("--predictions")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="contrast benchmarks")
    bsub = p.add_subparsers(dest="bench_command", required=True)
    bc = bsub.add_parser("contrast", help="coarse-vs-fine / high-vs-low arms")
    bc.add_argument("--mode", required=True, choices=bench_mod.ALL_MODES)
    bc.add_argument("--corpus", required=True)
    bc.add_argument("--clusters")
    bc.add_argument("--qa", required=True)
    bc.add_argument("--config")
    bc.add_argument("--retrieve-k", type=int, default=10)
    bc.add_argument("--percents", default="10,20,40,60,80,100")
    bc.add_argument("--out-dir", required=True)
    bc.add_argument("--no-timing-header", action="store_true")
    bc.set_defaults(func=_cmd_bench_contrast)

    p = sub.add_parser("config", help="render the effective configuration")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_config_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except Exception as exc:  # anything unexpected is fatal, not partial
        logger.error("fatal: %s", exc)
        return EXIT_FATAL


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
