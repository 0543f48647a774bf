from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funnelrag.chunker import (
    ChunkError,
    Granularity,
    RetrievalUnit,
    cluster_unit,
    passage_doc_id,
    read_units,
    segment_cluster,
    segment_document,
    write_units,
)
from funnelrag.corpus import Cluster
from tests.conftest import corpus_of, doc


def doc_unit(document) -> RetrievalUnit:
    return RetrievalUnit(document.doc_id, Granularity.DOCUMENT, None,
                         document.doc_id, document.title, document.text,
                         document.token_count)


def test_granularity_is_ordered_coarse_to_fine():
    assert Granularity.CLUSTER > Granularity.DOCUMENT > Granularity.PASSAGE


class TestSegmentCluster:
    def test_three_members_in_order(self):
        corpus = corpus_of(doc("A"), doc("B"), doc("C"))
        cluster = Cluster("c1", ["B", "A", "C"], 30)
        units = segment_cluster(cluster, corpus)
        assert [u.unit_id for u in units] == ["B", "A", "C"]
        assert all(u.parent_id == "c1" for u in units)
        assert all(u.granularity is Granularity.DOCUMENT for u in units)

    def test_singleton_cluster(self):
        corpus = corpus_of(doc("A"))
        units = segment_cluster(Cluster("c1", ["A"], 10), corpus)
        assert len(units) == 1 and units[0].parent_id == "c1"

    def test_missing_member_raises(self):
        corpus = corpus_of(doc("A"))
        with pytest.raises(ChunkError, match="missing doc"):
            segment_cluster(Cluster("c1", ["A", "Z"], 10), corpus)

    def test_cluster_unit_token_concatenation(self):
        corpus = corpus_of(doc("A", 7), doc("B", 3))
        unit = cluster_unit(Cluster("c1", ["A", "B"], 10), corpus)
        assert unit.text.split() == corpus["A"].text.split() + corpus["B"].text.split()
        assert unit.token_count == 10


class TestSegmentDocument:
    def test_window_arithmetic_250_into_100(self):
        d = doc("A", 250)
        passages = segment_document(doc_unit(d), 100)
        assert [p.token_count for p in passages] == [100, 100, 50]
        assert [p.unit_id for p in passages] == ["A#0", "A#1", "A#2"]
        assert all(p.title == "A" and p.parent_id == "A" for p in passages)

    def test_exact_fit_is_identity(self):
        d = doc("A", 100)
        passages = segment_document(doc_unit(d), 100)
        assert len(passages) == 1
        assert passages[0].text == d.text

    def test_empty_document_yields_no_passages(self):
        d = doc("A", text="")
        assert segment_document(doc_unit(d), 100) == []

    def test_rejects_non_document_unit(self):
        d = doc("A", 10)
        passage = segment_document(doc_unit(d), 5)[0]
        with pytest.raises(ChunkError):
            segment_document(passage, 5)

    @given(st.integers(min_value=0, max_value=2**32 - 1),
           st.integers(min_value=1, max_value=130))
    @settings(max_examples=50, deadline=None)
    def test_lossless_and_disjoint(self, seed, passage_size):
        rng = random.Random(seed)
        n = rng.randint(0, 400)
        text = " ".join(f"w{rng.randint(0, 999)}" for _ in range(n))
        d = doc("A", text=text)
        passages = segment_document(doc_unit(d), passage_size)
        rebuilt = [t for p in passages for t in p.text.split()]
        assert rebuilt == text.split()  # lossless round-trip
        assert sum(p.token_count for p in passages) == d.token_count  # disjoint
        for p in passages[:-1]:
            assert p.token_count == passage_size

    def test_two_hop_lineage_and_doc_recovery(self):
        corpus = corpus_of(doc("A", 120), doc("B", 30))
        cluster = Cluster("c9", ["A", "B"], 150)
        docs = segment_cluster(cluster, corpus)
        passages = segment_document(docs[0], 100)
        assert passages[0].parent_id == "A"
        assert docs[0].parent_id == "c9"
        assert passage_doc_id(passages[1].unit_id) == "A"


def test_units_file_round_trip(tmp_path):
    corpus = corpus_of(doc("A", 120), doc("B", 30))
    units = segment_cluster(Cluster("c1", ["A", "B"], 150), corpus)
    units += segment_document(units[0], 50)
    path = tmp_path / "units.jsonl"
    write_units(units, path)
    assert read_units(path) == units
