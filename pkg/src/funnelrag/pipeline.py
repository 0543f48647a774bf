"""End-to-end funnel orchestration.

Each query flows retrieval -> pre-ranking -> post-ranking, re-segmenting
units between stages; `stage_depth` truncates the chain. Per-stage wall
clock (including any scorer network time) is recorded on the trace. A flat
baseline mode indexes passages directly for comparison runs.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from funnelrag.chunker import (
    Granularity,
    RetrievalUnit,
    cluster_unit,
    segment_cluster,
    segment_document,
)
from funnelrag.config import (
    DEPTH_RETRIEVAL_ONLY,
    DEPTH_TWO_STAGE,
    FunnelConfig,
)
from funnelrag.corpus import Cluster, Corpus
from funnelrag.rank import (
    AggregationScheme,
    ScorerHandle,
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
)
from funnelrag.sparse import ScoredHit, SparseIndex, build_index, search

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, query_id: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed for query {query_id!r}: {cause}")
        self.stage = stage
        self.query_id = query_id
        self.cause = cause


@dataclass
class StageResult:
    stage: str
    granularity: Granularity
    candidates_in: int
    ranked: list[ScoredHit]        # full recorded ranking for this stage
    selected: int                  # how many flow to the next stage
    duration_s: float

    @property
    def hits(self) -> list[ScoredHit]:
        return self.ranked[: self.selected]


@dataclass
class FunnelTrace:
    """Per-query record. Every stage narrows: selected <= candidates_in and
    selected <= the stage budget (segmentation between stages may expand the
    raw candidate pool, selection shrinks it again)."""

    query_id: str
    stages: list[StageResult] = field(default_factory=list)

    @property
    def final_hits(self) -> list[ScoredHit]:
        return self.stages[-1].hits if self.stages else []

    def stage_seconds(self) -> dict[str, float]:
        return {s.stage: s.duration_s for s in self.stages}


@dataclass
class Resources:
    """Immutable after load; shared across concurrent queries."""

    corpus: Corpus
    clusters: list[Cluster]
    index: SparseIndex

    def __post_init__(self):
        self._by_id = {c.cluster_id: c for c in self.clusters}

    def cluster_by_id(self, cluster_id: str) -> Cluster:
        return self._by_id[cluster_id]


def build_resources(corpus: Corpus, clusters: list[Cluster],
                    config: FunnelConfig) -> Resources:
    units = [cluster_unit(c, corpus) for c in clusters]
    index = build_index(units, k1=config.k1, b=config.b)
    return Resources(corpus=corpus, clusters=clusters, index=index)


def _scheme(config: FunnelConfig) -> AggregationScheme:
    return AggregationScheme(kind=config.scheme, rep_tokens=config.rep_tokens,
                             include_query_tokens=config.include_query_tokens)


def run_funnel(query_id: str, question: str, config: FunnelConfig,
               resources: Resources,
               pre_scorer: ScorerHandle | None = None,
               post_scorer: ScorerHandle | None = None) -> FunnelTrace:
    """Run one query through the configured funnel depth."""
    pre_scorer = pre_scorer or parse_scorer_spec(config.pre_scorer)
    post_scorer = post_scorer or parse_scorer_spec(config.post_scorer)
    trace = FunnelTrace(query_id=query_id)

    t0 = time.monotonic()
    try:
        cluster_hits = search(resources.index, question, top_k=config.top_clusters)
    except Exception as exc:
        raise StageError(STAGE_RETRIEVAL, query_id, exc) from exc
    trace.stages.append(StageResult(
        stage=STAGE_RETRIEVAL, granularity=Granularity.CLUSTER,
        candidates_in=resources.index.doc_count,
        ranked=cluster_hits, selected=len(cluster_hits),
        duration_s=time.monotonic() - t0))
    if config.stage_depth == DEPTH_RETRIEVAL_ONLY:
        return trace

    t1 = time.monotonic()
    try:
        doc_units: list[RetrievalUnit] = []
        for hit in cluster_hits:
            doc_units.extend(
                segment_cluster(resources.cluster_by_id(hit.unit_id), resources.corpus))
        doc_hits = pre_rank(pre_scorer, question, doc_units, top_n=config.top_docs) \
            if doc_units else []
    except StageError:
        raise
    except Exception as exc:
        raise StageError(STAGE_PRE_RANK, query_id, exc) from exc
    trace.stages.append(StageResult(
        stage=STAGE_PRE_RANK, granularity=Granularity.DOCUMENT,
        candidates_in=len(doc_units),
        ranked=doc_hits, selected=len(doc_hits),
        duration_s=time.monotonic() - t1))
    if config.stage_depth == DEPTH_TWO_STAGE:
        return trace

    t2 = time.monotonic()
    try:
        doc_by_id = {u.unit_id: u for u in doc_units}
        passages: list[RetrievalUnit] = []
        for hit in doc_hits:
            passages.extend(segment_document(doc_by_id[hit.unit_id], config.passage_size))
        if passages:
            tensors = attention_tensors(post_scorer, question, passages)
            ranked = post_rank_all(list(zip(passages, tensors)), _scheme(config))
        else:
            ranked = []
    except StageError:
        raise
    except Exception as exc:
        raise StageError(STAGE_POST_RANK, query_id, exc) from exc
    trace.stages.append(StageResult(
        stage=STAGE_POST_RANK, granularity=Granularity.PASSAGE,
        candidates_in=len(passages),
        ranked=ranked, selected=min(config.top_passages, len(ranked)),
        duration_s=time.monotonic() - t2))
    return trace


def corpus_passages(corpus: Corpus, passage_size: int) -> list[RetrievalUnit]:
    """All passage windows of every document (early chunking)."""
    passages: list[RetrievalUnit] = []
    for doc_id in sorted(corpus.docs):
        doc = corpus.docs[doc_id]
        doc_unit = RetrievalUnit(doc_id, Granularity.DOCUMENT, None,
                                 doc.doc_id, doc.title, doc.text, doc.token_count)
        passages.extend(segment_document(doc_unit, passage_size))
    return passages


def build_flat_index(corpus: Corpus, config: FunnelConfig) -> tuple[SparseIndex, dict[str, RetrievalUnit]]:
    passages = corpus_passages(corpus, config.passage_size)
    index = build_index(passages, k1=config.k1, b=config.b)
    return index, {p.unit_id: p for p in passages}


def run_flat(query_id: str, question: str, config: FunnelConfig,
             index: SparseIndex, passages_by_id: dict[str, RetrievalUnit],
             rerank_pool: int = 0,
             pre_scorer: ScorerHandle | None = None) -> FunnelTrace:
    """Flat baseline: passages indexed directly, single sparse stage; with
    rerank_pool > 0, the pool is re-scored by the pre-ranking scorer."""
    trace = FunnelTrace(query_id=query_id)
    t0 = time.monotonic()
    try:
        hits = search(index, question,
                      top_k=rerank_pool if rerank_pool else config.top_passages)
    except Exception as exc:
        raise StageError(STAGE_RETRIEVAL, query_id, exc) from exc
    selected = len(hits) if rerank_pool else min(config.top_passages, len(hits))
    trace.stages.append(StageResult(
        stage=STAGE_RETRIEVAL, granularity=Granularity.PASSAGE,
        candidates_in=index.doc_count,
        ranked=hits, selected=selected,
        duration_s=time.monotonic() - t0))
    if not rerank_pool:
        return trace

    pre_scorer = pre_scorer or parse_scorer_spec(config.pre_scorer)
    t1 = time.monotonic()
    try:
        pool_units = [passages_by_id[h.unit_id] for h in hits]
        reranked = pre_rank(pre_scorer, question, pool_units,
                            top_n=config.top_passages) if pool_units else []
    except StageError:
        raise
    except Exception as exc:
        raise StageError(STAGE_PRE_RANK, query_id, exc) from exc
    trace.stages.append(StageResult(
        stage=STAGE_PRE_RANK, granularity=Granularity.PASSAGE,
        candidates_in=len(pool_units),
        ranked=reranked, selected=len(reranked),
        duration_s=time.monotonic() - t1))
    return trace


@dataclass
class BatchResult:
    run: RunFile
    traces: list[FunnelTrace]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def traces_to_run(traces: list[FunnelTrace]) -> RunFile:
    """Flatten traces into run records, ordered by (query, stage, rank).
    The final stage records its full scored ranking (distillation reads the
    scores past the selection cut); earlier stages record their outputs."""
    records: list[RunRecord] = []
    timings: dict[str, list[float]] = {}
    for trace in sorted(traces, key=lambda t: t.query_id):
        for idx, stage in enumerate(trace.stages):
            rows = stage.ranked if idx == len(trace.stages) - 1 else stage.hits
            for hit in rows:
                records.append(RunRecord(
                    query_id=trace.query_id, unit_id=hit.unit_id,
                    granularity=stage.granularity, rank=hit.rank,
                    score=hit.score, stage=stage.stage))
            timings.setdefault(stage.stage, []).append(stage.duration_s)
    mean_timings = {s: sum(v) / len(v) for s, v in timings.items() if v}
    return RunFile(records=records, timings=mean_timings)


def run_batch(qa: list[tuple[str, str]], config: FunnelConfig,
              resources: Resources,
              pre_scorer: ScorerHandle | None = None,
              post_scorer: ScorerHandle | None = None) -> BatchResult:
    """Run every (query_id, question) through the funnel. Per-query failures
    are recorded and the batch continues; callers map failures to exit codes.
    """
    pre_scorer = pre_scorer or parse_scorer_spec(config.pre_scorer)
    post_scorer = post_scorer or parse_scorer_spec(config.post_scorer)
    traces: list[FunnelTrace] = []
    failures: dict[str, str] = {}

    def run_one(item: tuple[str, str]) -> FunnelTrace:
        qid, question = item
        return run_funnel(qid, question, config, resources,
                          pre_scorer=pre_scorer, post_scorer=post_scorer)

    if config.parallelism > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            futures = {qid: pool.submit(run_one, (qid, q)) for qid, q in qa}
        for qid, fut in futures.items():
            try:
                traces.append(fut.result())
            except StageError as exc:
                logger.error("%s", exc)
                failures[qid] = str(exc)
    else:
        for qid, question in qa:
            try:
                traces.append(run_one((qid, question)))
            except StageError as exc:
                logger.error("%s", exc)
                failures[qid] = str(exc)

    return BatchResult(run=traces_to_run(traces), traces=traces, failures=failures)
