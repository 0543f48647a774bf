from __future__ import annotations

import pytest

from funnelrag.bench import (
    MODE_COARSE_FINE,
    MODE_HIGH_LOW,
    contrast_mode,
    lexical_scorer,
    oracle_scorer,
)
from funnelrag.config import FunnelConfig
from funnelrag.corpus import build_graph, cluster_documents
from funnelrag.evaluation import QAItem
from funnelrag.pipeline import build_resources
from funnelrag.synthdata import generate
from tests.conftest import corpus_of, doc


@pytest.fixture(scope="module")
def contrast_world():
    data = generate(n_docs=300, n_queries=10, seed=33)
    clusters = cluster_documents(data.corpus, build_graph(data.corpus), 4000)
    resources = build_resources(data.corpus, clusters, FunnelConfig())
    return data, resources


def drop_at(points, percent):
    return next(p.drop_vs_full for p in points if p.percent == percent)


class TestCoarseVsFine:
    def test_fine_degrades_no_worse_than_coarse_at_20(self, contrast_world):
        data, resources = contrast_world
        report = contrast_mode(MODE_COARSE_FINE, data.contrast_qa, resources,
                               retrieve_k=5)
        assert drop_at(report.curves["fine"], 20) \
            <= drop_at(report.curves["coarse"], 20)

    def test_forced_property_on_constructed_corpus(self):
        # gold text mid-document; distractor clusters tie coarsely (their
        # members jointly cover the query) but no single distractor document
        # covers it, so fine ranking must put the gold document first
        filler = lambda tag, n: " ".join(f"{tag}{i:03d}" for i in range(n))
        gold = doc("M-gold", text=filler("g", 40) + " needle alpha beta gamma "
                   + filler("h", 40), links=("M-pal",))
        pal = doc("M-pal", text=filler("p", 60), links=("M-gold",))
        distract = []
        for c in "ABC":
            d1 = doc(f"{c}-one", text=filler(c.lower(), 30) + " alpha beta",
                     links=(f"{c}-two",))
            d2 = doc(f"{c}-two", text=filler(c.lower() * 2, 30) + " gamma",
                     links=(f"{c}-one",))
            distract += [d1, d2]
        corpus = corpus_of(gold, pal, *distract)
        clusters = cluster_documents(corpus, build_graph(corpus), 4000)
        resources = build_resources(corpus, clusters, FunnelConfig())
        qa = [QAItem("q1", "alpha beta gamma", ("needle alpha",))]
        report = contrast_mode(MODE_COARSE_FINE, qa, resources, retrieve_k=4,
                               percents=(25, 50, 100))
        assert drop_at(report.curves["fine"], 25) == 0.0
        assert drop_at(report.curves["coarse"], 25) \
            >= drop_at(report.curves["fine"], 25)

    def test_same_scorer_same_granularity_identical_curves(self, contrast_world):
        data, resources = contrast_world
        report = contrast_mode(MODE_HIGH_LOW, data.contrast_qa, resources,
                               retrieve_k=5, high=lexical_scorer)
        assert report.curves["high"] == report.curves["low"]


class TestHighVsLow:
    def test_oracle_dominates_lexical_at_every_cutoff(self, contrast_world):
        data, resources = contrast_world
        report = contrast_mode(MODE_HIGH_LOW, data.contrast_qa, resources,
                               retrieve_k=5)
        for hi, lo in zip(report.curves["high"], report.curves["low"]):
            assert hi.percent == lo.percent
            assert hi.recall >= lo.recall

    def test_oracle_scorer_flags_answer_units(self, contrast_world):
        data, _ = contrast_world
        scorer = oracle_scorer(data.qa)
        item = data.qa[0]
        gold_unit = doc("u", text=f"stuff {item.answers[0]} stuff")
        from funnelrag.chunker import Granularity, RetrievalUnit
        u = RetrievalUnit("u", Granularity.DOCUMENT, None, "u", "u",
                          gold_unit.text, gold_unit.token_count)
        assert scorer(item.question, u) == 1.0

    def test_unknown_mode_rejected(self, contrast_world):
        data, resources = contrast_world
        with pytest.raises(ValueError, match="unknown contrast mode"):
            contrast_mode("sideways", data.qa, resources)
