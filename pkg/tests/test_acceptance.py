"""Acceptance suite: one test per release criterion, each at its stated
tolerance, printing a PASS line on success (run with -s or -rA to see them).
"""

from __future__ import annotations

import json
import math
import random
import re
import time

import numpy as np
import pytest

from funnelrag.bench import MODE_COARSE_FINE, MODE_HIGH_LOW, contrast_mode
from funnelrag.chunker import Granularity, RetrievalUnit, segment_document
from funnelrag.cli import EXIT_FATAL, EXIT_OK, main as cli_main
from funnelrag.config import FunnelConfig
from funnelrag.corpus import (
    Document,
    build_graph,
    cluster_documents,
    make_corpus,
    read_clusters,
    write_clusters,
    write_corpus,
)
from funnelrag.distill import (
    DistillPair,
    aggregate_local_to_global,
    annotate,
    bpr_loss,
)
from funnelrag.evaluation import (
    QAItem,
    UnitResolver,
    answer_recall,
    contextual_entropy,
    timing_report,
)
from funnelrag.pipeline import build_resources, run_batch
from funnelrag.rank import (
    ALL_SCHEMES,
    AggregationScheme,
    AttentionTensor,
    aggregate_attention,
)
from funnelrag.runfile import RunFile, RunRecord, read_run, write_run
from funnelrag.sparse import build_index, search
from funnelrag.synthdata import generate
from funnelrag.text import analyze
from tests.test_rank import oracle_aggregate
from tests.test_sparse import brute_force_bm25, unit as sparse_unit


def _ok(label: str) -> None:
    print(f"ACCEPTANCE PASS: {label}")


def random_linked_docs(rng: random.Random, n: int = 30):
    ids = [f"N{i:02d}" for i in range(n)]
    docs = []
    for i, doc_id in enumerate(ids):
        links = tuple(t for t in ids if t != doc_id and rng.random() < 0.15)
        tokens = rng.randint(5, 120)
        text = " ".join(f"x{rng.randint(0, 5000)}" for _ in range(tokens))
        docs.append(Document(doc_id, doc_id, text, links, tokens))
    return docs


def test_clustering_partition_determinism_and_speed(tmp_path):
    """10 random 30-node graphs: partition, size bound, byte-identical
    across reruns and input permutations, under one second."""
    started = time.monotonic()
    for trial in range(10):
        rng = random.Random(1000 + trial)
        docs = random_linked_docs(rng)
        budget = rng.randint(60, 400)

        corpus = make_corpus(list(docs))
        clusters = cluster_documents(corpus, build_graph(corpus), budget)

        members = [m for c in clusters for m in c.member_doc_ids]
        assert sorted(members) == sorted(corpus.docs)
        for c in clusters:
            if len(c.member_doc_ids) > 1:
                assert c.token_count <= budget

        rerun = cluster_documents(corpus, build_graph(corpus), budget)
        shuffled = list(docs)
        rng.shuffle(shuffled)
        corpus2 = make_corpus(shuffled)
        permuted = cluster_documents(corpus2, build_graph(corpus2), budget)

        paths = [tmp_path / f"{trial}-{tag}.jsonl" for tag in ("a", "b", "c")]
        for path, result in zip(paths, (clusters, rerun, permuted)):
            write_clusters(result, path)
        blobs = [p.read_bytes() for p in paths]
        assert blobs[0] == blobs[1] == blobs[2]
    elapsed = time.monotonic() - started
    assert elapsed < 1.0, f"clustering acceptance took {elapsed:.2f}s"
    _ok(f"clustering partition/determinism on 10 random graphs ({elapsed:.2f}s)")


def test_clustering_matches_hand_traces():
    """Five instances traced by hand through the merge procedure."""
    def run(token_by_id, links, budget):
        docs = [Document(d, d, " ".join(f"t{i}" for i in range(n)),
                         tuple(links.get(d, ())), n)
                for d, n in token_by_id.items()]
        corpus = make_corpus(docs)
        out = cluster_documents(corpus, build_graph(corpus), budget)
        return [(c.cluster_id, c.member_doc_ids, c.token_count) for c in out]

    # 1: mutual pair fits the budget -> single cluster seeded at A
    assert run({"A": 50, "B": 50}, {"A": ["B"], "B": ["A"]}, 4000) \
        == [("A", ["A", "B"], 100)]
    # 2: mutual pair exceeds the budget -> singletons
    assert run({"A": 3000, "B": 3000}, {"A": ["B"], "B": ["A"]}, 4000) \
        == [("A", ["A"], 3000), ("B", ["B"], 3000)]
    # 3: triangle plus pendant; A merges B then hits the cap, C picks up D
    assert run({"A": 100, "B": 100, "C": 100, "D": 100},
               {"A": ["B", "C"], "B": ["C"], "D": ["C"]}, 250) \
        == [("A", ["A", "B"], 200), ("C", ["C", "D"], 200)]
    # 4: high-lcc leaf X absorbs hub and Y; pendant Z joins last and seeds
    assert run({"H": 10, "X": 10, "Y": 10, "Z": 10},
               {"H": ["X", "Y", "Z"], "X": ["Y"]}, 100) \
        == [("Z", ["Z", "X", "H", "Y"], 40)]
    # 5: closeness fraction ranks the singleton {A} (1/1) over the triangle
    #    cluster (2/3); only the first merge fits
    assert run({"X": 10, "A": 20, "B1": 10, "B2": 10, "B3": 10},
               {"X": ["A", "B1", "B2"], "B1": ["B2"], "B2": ["B3"],
                "B3": ["B1"]}, 45) \
        == [("B3", ["B3", "B1", "B2"], 30), ("X", ["X", "A"], 30)]
    _ok("clustering equals 5 hand-traced instances")


def test_bm25_brute_force_equivalence():
    """10 random corpora (<=50 units, <=200-term vocab): scores within 1e-9
    relative of the direct formula; identical ranking."""
    for trial in range(10):
        rng = random.Random(2000 + trial)
        vocab = [f"v{i}" for i in range(rng.randint(10, 200))]
        units = [sparse_unit(f"u{i:02d}",
                             " ".join(rng.choice(vocab)
                                      for _ in range(rng.randint(0, 80))))
                 for i in range(rng.randint(2, 50))]
        query = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 5)))
        index = build_index(units)
        hits = search(index, query, len(units))
        expected = brute_force_bm25(units, query)
        expected_rank = sorted(((uid, s) for uid, s in expected.items() if s > 0),
                               key=lambda p: (-p[1], p[0]))
        assert [h.unit_id for h in hits] == [uid for uid, _ in expected_rank]
        for hit, (_, score) in zip(hits, expected_rank):
            assert hit.score == pytest.approx(score, rel=1e-9)
    _ok("BM25 matches brute-force formula on 10 random corpora (rel 1e-9)")


def test_chunking_round_trip_100_docs():
    rng = random.Random(3000)
    for i in range(100):
        n = rng.randint(0, 500)
        text = " ".join(f"w{rng.randint(0, 2000)}" for _ in range(n))
        passage_size = rng.randint(1, 120)
        doc_unit = RetrievalUnit(f"D{i}", Granularity.DOCUMENT, None, f"D{i}",
                                 "t", text, n)
        passages = segment_document(doc_unit, passage_size)
        rebuilt = [tok for p in passages for tok in p.text.split()]
        assert rebuilt == text.split()
        assert sum(p.token_count for p in passages) == n
        assert len({p.unit_id for p in passages}) == len(passages)
    _ok("chunking round-trips 100 random documents losslessly")


def test_attention_aggregation_oracle_50_tensors():
    """Schemes (i)-(v) vs the nested-loop oracle at 1e-12; representative
    saturation; masked-position invariance."""
    rng = np.random.default_rng(4000)
    for _ in range(50):
        ln, lh = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        lt = int(rng.integers(2, 65))
        qlen = int(rng.integers(0, lt))
        mask = np.zeros(lt, dtype=bool)
        mask[:qlen] = True
        tensor = AttentionTensor(scores=rng.random((ln, lh, lt)),
                                 query_token_mask=mask)
        lr = int(rng.integers(1, 12))
        for kind in ALL_SCHEMES:
            scheme = AggregationScheme(kind=kind, rep_tokens=lr)
            assert aggregate_attention(tensor, scheme) == pytest.approx(
                oracle_aggregate(tensor, scheme), abs=1e-12)

        # saturated representative selection equals the plain eligible mean
        sat = AggregationScheme(kind="mean-rep", rep_tokens=lt + 1)
        eligible_mean = tensor.scores[:, :, ~mask].mean()
        assert aggregate_attention(tensor, sat) == pytest.approx(
            eligible_mean, abs=1e-12)

        # perturbing masked positions never changes any scheme's output
        if qlen:
            noisy = tensor.scores.copy()
            noisy[:, :, :qlen] = rng.random((ln, lh, qlen)) * 50
            perturbed = AttentionTensor(scores=noisy, query_token_mask=mask)
            for kind in ALL_SCHEMES:
                scheme = AggregationScheme(kind=kind, rep_tokens=lr)
                assert aggregate_attention(perturbed, scheme) \
                    == aggregate_attention(tensor, scheme)
    _ok("attention aggregation matches nested-loop oracle on 50 tensors (1e-12)")


def test_distillation_criteria():
    scores = {"d#0": 0.2, "d#1": 0.8}
    lineage = {"d#0": "d", "d#1": "d"}
    assert aggregate_local_to_global(scores, lineage, 1.0)[0].s_agg == 0.8
    assert aggregate_local_to_global(scores, lineage, 0.0)[0].s_agg == 0.5

    for trial in range(100):
        rng = random.Random(5000 + trial)
        n = rng.randint(1, 15)
        cands = [aggregate_local_to_global({f"d{i}#0": rng.random()},
                                           {f"d{i}#0": f"d{i}"}, 0.75)[0]
                 for i in range(n)]
        texts = {c.doc_id: ("needle" if rng.random() < 0.4 else "hay")
                 for c in cands}
        pos, neg, _ = annotate(cands, texts, ["needle"], rng.randint(0, n))
        pos_ids = {c.doc_id for c in pos}
        neg_ids = {c.doc_id for c in neg}
        assert pos_ids | neg_ids == {c.doc_id for c in cands}
        assert not pos_ids & neg_ids

    def margin_pair(m):
        return DistillPair("q", "p", "n", m, 0.0, 1.0, 0.0, "hit")

    assert bpr_loss([margin_pair(0.0)]) == pytest.approx(math.log(2), abs=1e-12)
    losses = [bpr_loss([margin_pair(m)]) for m in (-1.0, 0.0, 1.0, 2.0)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    _ok("distillation endpoint identities, partition law, BPR reference values")


@pytest.fixture(scope="module")
def synthetic_world():
    data = generate(n_docs=2000, n_queries=50, seed=7)
    clusters = cluster_documents(data.corpus, build_graph(data.corpus), 4000)
    config = FunnelConfig()  # S=4000, K=80, N=8, H=4, builtin scorers
    resources = build_resources(data.corpus, clusters, config)
    return data, clusters, config, resources


def test_end_to_end_funnel_on_planted_corpus(synthetic_world):
    """2000 documents, 50 queries with uniquely planted answers: AR@4 = 1.0,
    AR monotone in k, per-stage narrowing, the report format, under 30s."""
    data, clusters, config, resources = synthetic_world
    started = time.monotonic()
    result = run_batch([(q.query_id, q.question) for q in data.qa],
                       config, resources)
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"funnel batch took {elapsed:.1f}s"
    assert result.ok

    resolver = UnitResolver(data.corpus, clusters, config.passage_size)
    recalls = [answer_recall(result.run, data.qa, k, resolver.text)
               for k in (1, 2, 3, 4)]
    assert recalls[-1] == 1.0
    assert recalls == sorted(recalls)

    for trace in result.traces:
        budgets = [config.top_clusters, config.top_docs, config.top_passages]
        for stage, budget in zip(trace.stages, budgets):
            assert stage.selected <= stage.candidates_in
            assert stage.selected <= budget

    rendered = timing_report([t.stage_seconds() for t in result.traces]).render()
    assert re.fullmatch(r"\d+\.\d\d \(\d+\.\d\d\+\d+\.\d\d\+\d+\.\d\d\)", rendered)
    _ok(f"end-to-end funnel AR@4=1.0 in {elapsed:.1f}s, report {rendered!r}")


def test_contrast_modes_reproduce_qualitative_shape(synthetic_world):
    data, _, _, resources = synthetic_world
    report = contrast_mode(MODE_COARSE_FINE, data.contrast_qa, resources,
                           retrieve_k=10)
    drop = {arm: {p.percent: p.drop_vs_full for p in pts}
            for arm, pts in report.curves.items()}
    assert drop["fine"][20] <= drop["coarse"][20]

    report2 = contrast_mode(MODE_HIGH_LOW, data.contrast_qa, resources,
                            retrieve_k=10)
    for hi, lo in zip(report2.curves["high"], report2.curves["low"]):
        assert hi.recall >= lo.recall
    _ok(f"contrast shape: fine drop {drop['fine'][20]:.1f}% <= "
        f"coarse drop {drop['coarse'][20]:.1f}% at 20%; high >= low everywhere")


def test_entropy_reference_values():
    def run_with_titles(titles_by_unit, k=4):
        records = [RunRecord("q1", uid, Granularity.PASSAGE, i + 1,
                             float(10 - i), "post-rank")
                   for i, uid in enumerate(titles_by_unit)]
        run = RunFile(records=records)
        return contextual_entropy(run, k, lambda uid, g: titles_by_unit[uid])

    same = run_with_titles({"a": "t", "b": "t", "c": "t", "d": "t"})
    assert same.mean_bits == 0.0
    split = run_with_titles({"a": "t1", "b": "t1", "c": "t2", "d": "t3"})
    assert split.mean_bits == pytest.approx(1.5, abs=1e-12)
    _ok("entropy: uniform-title 0.0 exactly; (2,1,1) split 1.5 bits (1e-12)")


def test_cli_round_trips_and_exit_codes(tmp_path):
    """Every subcommand: documented exit codes and write/read identity."""
    data = generate(n_docs=120, n_queries=4, seed=17)
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(data.corpus, corpus)
    qa = tmp_path / "qa.jsonl"
    with open(qa, "w", encoding="utf-8") as fh:
        for item in data.qa:
            fh.write(json.dumps({"query_id": item.query_id,
                                 "question": item.question,
                                 "answers": list(item.answers)}) + "\n")

    clusters = tmp_path / "clusters.jsonl"
    assert cli_main(["cluster", "--corpus", str(corpus), "--max-size", "4000",
                     "--out", str(clusters)]) == EXIT_OK
    parsed = read_clusters(clusters)
    rewritten = tmp_path / "clusters2.jsonl"
    write_clusters(parsed, rewritten)
    assert rewritten.read_bytes() == clusters.read_bytes()

    index_dir = tmp_path / "idx"
    assert cli_main(["index", "--units", str(clusters), "--corpus", str(corpus),
                     "--out", str(index_dir)]) == EXIT_OK

    run0 = tmp_path / "r0.tsv"
    assert cli_main(["retrieve", "--index", str(index_dir), "--queries", str(qa),
                     "--top-k", "10", "--out", str(run0)]) == EXIT_OK
    run0_back = read_run(run0)
    run0_copy = tmp_path / "r0b.tsv"
    write_run(run0_back, run0_copy)
    assert read_run(run0_copy).records == run0_back.records

    run1 = tmp_path / "r1.tsv"
    assert cli_main(["pre-rank", "--scorer", "builtin", "--in", str(run0),
                     "--top-n", "4", "--out", str(run1), "--corpus", str(corpus),
                     "--clusters", str(clusters), "--queries", str(qa)]) == EXIT_OK
    run2 = tmp_path / "r2.tsv"
    assert cli_main(["post-rank", "--scorer", "builtin", "--scheme", "mean-rep",
                     "--rep-tokens", "4", "--top-h", "2", "--in", str(run1),
                     "--out", str(run2), "--corpus", str(corpus),
                     "--queries", str(qa)]) == EXIT_OK

    pipe = tmp_path / "pipe.tsv"
    assert cli_main(["pipeline", "run", "--corpus", str(corpus),
                     "--clusters", str(clusters), "--qa", str(qa),
                     "--out", str(pipe)]) == EXIT_OK

    pairs = tmp_path / "pairs.jsonl"
    assert cli_main(["distill-export", "--post-run", str(run2),
                     "--pre-run", str(run1), "--qa", str(qa),
                     "--corpus", str(corpus), "--alpha", "0.75", "--topk", "1",
                     "--out", str(pairs)]) == EXIT_OK
    from funnelrag.distill import read_pairs, write_pairs
    pairs_back = read_pairs(pairs)
    pairs_copy = tmp_path / "pairs2.jsonl"
    write_pairs(pairs_back, pairs_copy)
    assert pairs_copy.read_bytes() == pairs.read_bytes()

    assert cli_main(["eval", "--run", str(pipe), "--qa", str(qa),
                     "--metric", "ar", "--k", "4", "--corpus", str(corpus),
                     "--clusters", str(clusters)]) == EXIT_OK

    bench_dir = tmp_path / "bench"
    assert cli_main(["bench", "contrast", "--mode", "high-vs-low",
                     "--corpus", str(corpus), "--clusters", str(clusters),
                     "--qa", str(qa), "--out-dir", str(bench_dir)]) == EXIT_OK

    assert cli_main(["retrieve", "--index", str(tmp_path / "missing"),
                     "--queries", str(qa), "--out", str(tmp_path / "x")]) == EXIT_FATAL
    assert cli_main(["cluster"]) == EXIT_FATAL
    _ok("every CLI subcommand round-trips its formats with documented exit codes")
