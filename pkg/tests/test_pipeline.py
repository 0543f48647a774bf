from __future__ import annotations

import pytest

from funnelrag.chunker import Granularity, passage_doc_id
from funnelrag.config import FunnelConfig
from funnelrag.corpus import build_graph, cluster_documents
from funnelrag.pipeline import (
    build_flat_index,
    build_resources,
    run_batch,
    run_flat,
    run_funnel,
    traces_to_run,
)
from funnelrag.runfile import write_run
from funnelrag.synthdata import generate


@pytest.fixture(scope="module")
def small_world():
    data = generate(n_docs=120, n_queries=6, seed=21)
    clusters = cluster_documents(data.corpus, build_graph(data.corpus), 4000)
    config = FunnelConfig(top_clusters=10, top_docs=4, top_passages=2)
    resources = build_resources(data.corpus, clusters, config)
    return data, config, resources


class TestRunFunnel:
    def test_planted_answer_reaches_rank_one(self, small_world):
        data, config, resources = small_world
        item = data.qa[0]
        trace = run_funnel(item.query_id, item.question, config, resources)
        assert len(trace.stages) == 3
        top = trace.final_hits[0]
        assert passage_doc_id(top.unit_id) == data.gold_doc_by_query[item.query_id]

    def test_stage_narrowing_and_lineage(self, small_world):
        data, config, resources = small_world
        item = data.qa[1]
        trace = run_funnel(item.query_id, item.question, config, resources)
        budgets = [config.top_clusters, config.top_docs, config.top_passages]
        for stage, budget in zip(trace.stages, budgets):
            assert stage.selected <= stage.candidates_in
            assert stage.selected <= budget
        cluster_ids = {h.unit_id for h in trace.stages[0].hits}
        doc_ids = {h.unit_id for h in trace.stages[1].hits}
        members = set()
        for cid in cluster_ids:
            members.update(resources.cluster_by_id(cid).member_doc_ids)
        assert doc_ids <= members  # every doc came from a retrieved cluster
        for hit in trace.final_hits:
            assert passage_doc_id(hit.unit_id) in doc_ids

    def test_retrieval_only_depth(self, small_world):
        data, config, resources = small_world
        cfg = FunnelConfig(**{**config.__dict__, "stage_depth": "retrieval-only",
                              "top_clusters": 4})
        trace = run_funnel("q", data.qa[0].question, cfg, resources)
        assert len(trace.stages) == 1
        assert len(trace.stages[0].hits) <= 4
        assert trace.stages[0].granularity is Granularity.CLUSTER

    def test_two_stage_matches_full_runs_stage_two(self, small_world):
        data, config, resources = small_world
        item = data.qa[2]
        cfg2 = FunnelConfig(**{**config.__dict__, "stage_depth": "two-stage"})
        partial = run_funnel(item.query_id, item.question, cfg2, resources)
        full = run_funnel(item.query_id, item.question, config, resources)
        assert [h.unit_id for h in partial.stages[1].hits] \
            == [h.unit_id for h in full.stages[1].hits]

    def test_empty_query_gives_empty_stages(self, small_world):
        _, config, resources = small_world
        trace = run_funnel("q-empty", "", config, resources)
        assert [len(s.hits) for s in trace.stages] == [0, 0, 0]


class TestRunBatch:
    def test_batch_produces_group_per_query(self, small_world):
        data, config, resources = small_world
        queries = [(q.query_id, q.question) for q in data.qa]
        result = run_batch(queries, config, resources)
        assert result.ok
        assert sorted(result.run.queries()) == sorted(q.query_id for q in data.qa)
        result.run.validate()

    def test_rerun_is_byte_identical_without_timings(self, small_world, tmp_path):
        data, config, resources = small_world
        queries = [(q.query_id, q.question) for q in data.qa]
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_run(run_batch(queries, config, resources).run, a, include_timings=False)
        write_run(run_batch(queries, config, resources).run, b, include_timings=False)
        assert a.read_bytes() == b.read_bytes()

    def test_parallel_equals_sequential(self, small_world):
        data, config, resources = small_world
        queries = [(q.query_id, q.question) for q in data.qa]
        seq = run_batch(queries, config, resources)
        par_cfg = FunnelConfig(**{**config.__dict__, "parallelism": 4})
        par = run_batch(queries, par_cfg, resources)
        assert seq.run.records == par.run.records

    def test_synthetic_post_scorer_is_deterministic(self, small_world):
        data, _, resources = small_world
        cfg = FunnelConfig(top_clusters=10, top_docs=4, top_passages=2,
                           post_scorer="synthetic:42")
        queries = [(q.query_id, q.question) for q in data.qa[:3]]
        a = run_batch(queries, cfg, resources)
        b = run_batch(queries, cfg, resources)
        assert a.run.records == b.run.records


class TestTracesToRun:
    def test_final_stage_keeps_full_ranking(self, small_world):
        data, config, resources = small_world
        item = data.qa[0]
        trace = run_funnel(item.query_id, item.question, config, resources)
        run = traces_to_run([trace])
        post_rows = run.for_query_stage(item.query_id, "post-rank")
        assert len(post_rows) == len(trace.stages[-1].ranked)
        pre_rows = run.for_query_stage(item.query_id, "pre-rank")
        assert len(pre_rows) == trace.stages[1].selected


class TestFlatBaseline:
    def test_flat_single_stage(self, small_world):
        data, config, resources = small_world
        index, by_id = build_flat_index(data.corpus, config)
        item = data.qa[0]
        trace = run_flat(item.query_id, item.question, config, index, by_id)
        assert len(trace.stages) == 1
        assert trace.stages[0].granularity is Granularity.PASSAGE
        gold = data.gold_doc_by_query[item.query_id]
        assert passage_doc_id(trace.final_hits[0].unit_id) == gold

    def test_flat_with_rerank_pool(self, small_world):
        data, config, resources = small_world
        index, by_id = build_flat_index(data.corpus, config)
        item = data.qa[1]
        trace = run_flat(item.query_id, item.question, config, index, by_id,
                         rerank_pool=20)
        assert [s.stage for s in trace.stages] == ["retrieval", "pre-rank"]
        assert trace.stages[1].selected <= config.top_passages
