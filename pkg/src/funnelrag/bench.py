"""Contrast experiments: granularity and scorer-capacity ablations.

Both modes rerank the same retrieved pool two ways and compare degradation
curves: `coarse-vs-fine` scores clusters against the documents segmented
from them; `high-vs-low` scores one fine-grained pool with two scorers of
different capacity. An answer-aware oracle scorer stands in for the
high-capacity model when none is wired up.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

from funnelrag.chunker import Granularity, RetrievalUnit, cluster_unit, segment_cluster
from funnelrag.evaluation import CurvePoint, QAItem, contains_answer, degradation_curve
from funnelrag.pipeline import Resources
from funnelrag.rank import builtin_lexical_score
from funnelrag.runfile import STAGE_PRE_RANK, RunFile, RunRecord
from funnelrag.sparse import search

MODE_COARSE_FINE = "coarse-vs-fine"
MODE_HIGH_LOW = "high-vs-low"
ALL_MODES = (MODE_COARSE_FINE, MODE_HIGH_LOW)

UnitScorer = Callable[[str, RetrievalUnit], float]


def lexical_scorer(query: str, unit: RetrievalUnit) -> float:
    return builtin_lexical_score(query, unit.text)


def oracle_scorer(qa: Sequence[QAItem]) -> UnitScorer:
    """Scores 1.0 when the unit text contains a gold answer for the query's
    question text, else falls back to 0.0. A stand-in upper bound for a
    high-capacity reranker."""
    answers_by_question = {item.question: item.answers for item in qa}

    def score(query: str, unit: RetrievalUnit) -> float:
        answers = answers_by_question.get(query, ())
        return 1.0 if answers and contains_answer(unit.text, answers) else 0.0

    return score


def _rank_records(query_id: str, query: str, units: list[RetrievalUnit],
                  scorer: UnitScorer, granularity: Granularity) -> list[RunRecord]:
    scored = sorted(((u.unit_id, scorer(query, u)) for u in units),
                    key=lambda pair: (-pair[1], pair[0]))
    return [RunRecord(query_id=query_id, unit_id=uid, granularity=granularity,
                      rank=i + 1, score=s, stage=STAGE_PRE_RANK)
            for i, (uid, s) in enumerate(scored)]


@dataclass
class ContrastReport:
    mode: str
    arms: dict[str, RunFile]
    curves: dict[str, list[CurvePoint]]


def contrast_mode(mode: str, qa: Sequence[QAItem], resources: Resources,
                  retrieve_k: int = 10,
                  percents: Sequence[float] = (10, 20, 40, 60, 80, 100),
                  low: UnitScorer = lexical_scorer,
                  high: UnitScorer | None = None) -> ContrastReport:
    """Build both arms' run files and their degradation curves."""
    if mode not in ALL_MODES:
        raise ValueError(f"unknown contrast mode {mode!r}; have {ALL_MODES}")

    arm_records: dict[str, list[RunRecord]] = {}
    arm_seconds: dict[str, float] = {}
    unit_texts: dict[tuple[str, Granularity], str] = {}

    if mode == MODE_COARSE_FINE:
        arm_names = ("coarse", "fine")
        scorers = {"coarse": low, "fine": low}
    else:
        high = high or oracle_scorer(qa)
        arm_names = ("high", "low")
        scorers = {"high": high, "low": low}
    for arm in arm_names:
        arm_records[arm] = []
        arm_seconds[arm] = 0.0

    for item in qa:
        cluster_hits = search(resources.index, item.question, top_k=retrieve_k)
        clusters = [resources.cluster_by_id(h.unit_id) for h in cluster_hits]
        cl_units = [cluster_unit(c, resources.corpus) for c in clusters]
        doc_units: list[RetrievalUnit] = []
        for cluster in clusters:
            doc_units.extend(segment_cluster(cluster, resources.corpus))
        for u in cl_units + doc_units:
            unit_texts[(u.unit_id, u.granularity)] = u.text

        if mode == MODE_COARSE_FINE:
            pools = {"coarse": (cl_units, Granularity.CLUSTER),
                     "fine": (doc_units, Granularity.DOCUMENT)}
        else:
            pools = {"high": (doc_units, Granularity.DOCUMENT),
                     "low": (doc_units, Granularity.DOCUMENT)}
        for arm in arm_names:
            units, gran = pools[arm]
            t0 = time.monotonic()
            arm_records[arm].extend(
                _rank_records(item.query_id, item.question, units, scorers[arm], gran))
            arm_seconds[arm] += time.monotonic() - t0

    def lookup(unit_id: str, granularity: Granularity) -> str:
        return unit_texts[(unit_id, granularity)]

    arms: dict[str, RunFile] = {}
    curves: dict[str, list[CurvePoint]] = {}
    n = max(len(qa), 1)
    for arm in arm_names:
        run = RunFile(records=arm_records[arm],
                      timings={STAGE_PRE_RANK: arm_seconds[arm] / n})
        arms[arm] = run
        curves[arm] = degradation_curve(run, qa, percents, lookup,
                                        stage=STAGE_PRE_RANK)
    return ContrastReport(mode=mode, arms=arms, curves=curves)
