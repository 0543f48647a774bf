"""Retrieval metrics and report shaping.

Answer Recall is normalized substring containment: it measures whether the
retrieved text literally carries an answer string, nothing stronger. The
source-concentration entropy uses base-2 logs over the title distribution of
the top passages: 0 bits means every passage came from one document.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from funnelrag.chunker import (
    Granularity,
    RetrievalUnit,
    cluster_unit,
    passage_doc_id,
    segment_document,
)
from funnelrag.corpus import Cluster, Corpus
from funnelrag.runfile import RunFile, STAGE_ORDER
from funnelrag.text import normalize_em, normalize_match, token_count

logger = logging.getLogger(__name__)

MAX_ANSWER_TOKENS = 5


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class QAItem:
    query_id: str
    question: str
    answers: tuple[str, ...]

    def __post_init__(self):
        if not self.answers:
            raise EvalError(f"query {self.query_id!r} has no answers")


def load_qa(path: str | Path, drop_long_answers: bool = False) -> list[QAItem]:
    """Read QA JSONL ({"query_id","question","answers"}).

    With drop_long_answers, answers over five tokens are discarded; items
    left with no answers are skipped (counted in a warning).
    """
    items: list[QAItem] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                answers = [str(a) for a in rec["answers"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvalError(f"{path}:{lineno}: malformed QA line: {exc}") from exc
            if drop_long_answers:
                answers = [a for a in answers if token_count(a) <= MAX_ANSWER_TOKENS]
            if not answers:
                skipped += 1
                continue
            items.append(QAItem(
                query_id=str(rec["query_id"]),
                question=str(rec["question"]),
                answers=tuple(answers)))
    if skipped:
        logger.warning("skipped %d QA items left with no answers", skipped)
    return items


def load_queries(path: str | Path) -> list[tuple[str, str]]:
    """(query_id, question) pairs; tolerates missing answers fields."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append((str(rec["query_id"]), str(rec["question"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvalError(f"{path}:{lineno}: malformed query line: {exc}") from exc
    return out


def contains_answer(text: str, answers: Sequence[str]) -> bool:
    norm = normalize_match(text)
    return any(normalize_match(a) in norm for a in answers if a.strip())


def exact_match(prediction: str, answers: Sequence[str]) -> bool:
    """Normalized string equality against any gold answer."""
    pred = normalize_em(prediction)
    return any(pred == normalize_em(a) for a in answers)


class UnitResolver:
    """Resolve unit_id -> (text, title) for any granularity by re-deriving
    units from the corpus and cluster files (the `doc#k` id scheme makes
    passages recoverable without side tables)."""

    def __init__(self, corpus: Corpus, clusters: Sequence[Cluster] = (),
                 passage_size: int = 100):
        self.corpus = corpus
        self.clusters = {c.cluster_id: c for c in clusters}
        self.passage_size = passage_size
        self._passage_cache: dict[str, list] = {}

    def text(self, unit_id: str, granularity: Granularity) -> str:
        return self._resolve(unit_id, granularity).text

    def title(self, unit_id: str, granularity: Granularity) -> str:
        return self._resolve(unit_id, granularity).title

    def _resolve(self, unit_id: str, granularity: Granularity) -> RetrievalUnit:
        if granularity is Granularity.CLUSTER:
            cluster = self.clusters.get(unit_id)
            if cluster is None:
                raise EvalError(f"unresolvable cluster unit {unit_id!r}")
            return cluster_unit(cluster, self.corpus)
        if granularity is Granularity.DOCUMENT:
            if unit_id not in self.corpus:
                raise EvalError(f"unresolvable document unit {unit_id!r}")
            doc = self.corpus[unit_id]
            return RetrievalUnit(unit_id, Granularity.DOCUMENT, None,
                                 doc.doc_id, doc.title, doc.text, doc.token_count)
        doc_id = passage_doc_id(unit_id)
        if doc_id not in self.corpus:
            raise EvalError(f"unresolvable passage unit {unit_id!r}")
        if doc_id not in self._passage_cache:
            doc = self.corpus[doc_id]
            doc_unit = RetrievalUnit(doc_id, Granularity.DOCUMENT, None,
                                     doc.doc_id, doc.title, doc.text,
                                     doc.token_count)
            self._passage_cache[doc_id] = segment_document(doc_unit, self.passage_size)
        for u in self._passage_cache[doc_id]:
            if u.unit_id == unit_id:
                return u
        raise EvalError(f"unresolvable passage unit {unit_id!r}")


TextLookup = Callable[[str, Granularity], str]


def answer_recall(run: RunFile, qa: Sequence[QAItem], k: int,
                  unit_text: TextLookup, stage: str | None = None) -> float:
    """Fraction of queries whose top-k units contain an answer string.

    Queries in `qa` with no run records count as misses; run queries missing
    from `qa` are an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    stage = stage or _final_stage(run)
    qa_ids = {item.query_id for item in qa}
    run_ids = set(run.queries())
    unknown = run_ids - qa_ids
    if unknown:
        raise EvalError(f"run contains queries missing from QA: {sorted(unknown)[:5]}")
    if not qa:
        return 0.0
    hits = 0
    for item in qa:
        recs = run.for_query_stage(item.query_id, stage)[:k]
        if any(contains_answer(unit_text(r.unit_id, r.granularity), item.answers)
               for r in recs):
            hits += 1
    return hits / len(qa)


def _final_stage(run: RunFile) -> str:
    stages = run.stages()
    if not stages:
        return STAGE_ORDER[0]
    ordered = [s for s in STAGE_ORDER if s in stages]
    return ordered[-1] if ordered else stages[-1]


TitleLookup = Callable[[str, Granularity], str]


@dataclass
class EntropyReport:
    mean_bits: float
    queries: int
    skipped: int


def contextual_entropy(run: RunFile, k: int, unit_title: TitleLookup,
                       stage: str | None = None) -> EntropyReport:
    """Mean base-2 entropy of the source-title distribution over each query's
    top-k passages. Queries with no retrieved passages are skipped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    stage = stage or _final_stage(run)
    entropies = []
    skipped = 0
    for qid in run.queries():
        recs = [r for r in run.for_query_stage(qid, stage)
                if r.granularity is Granularity.PASSAGE][:k]
        if not recs:
            skipped += 1
            continue
        counts: dict[str, int] = {}
        for r in recs:
            title = unit_title(r.unit_id, r.granularity)
            counts[title] = counts.get(title, 0) + 1
        n = sum(counts.values())
        entropy = -sum((c / n) * math.log2(c / n) for c in counts.values())
        entropies.append(entropy)
    if skipped:
        logger.warning("entropy: skipped %d queries with no retrieved passages", skipped)
    mean = sum(entropies) / len(entropies) if entropies else 0.0
    return EntropyReport(mean_bits=mean, queries=len(entropies), skipped=skipped)


@dataclass(frozen=True)
class CurvePoint:
    percent: float
    recall: float
    drop_vs_full: float


def degradation_curve(run: RunFile, qa: Sequence[QAItem], percents: Sequence[float],
                      unit_text: TextLookup, stage: str | None = None) -> list[CurvePoint]:
    """Answer recall at percentage cutoffs of each query's ranked list, with
    the relative drop against the 100% point."""
    if any(not 0 < p <= 100 for p in percents):
        raise ValueError("percents must lie in (0, 100]")
    stage = stage or _final_stage(run)
    qa_ids = {item.query_id for item in qa}
    unknown = set(run.queries()) - qa_ids
    if unknown:
        raise EvalError(f"run contains queries missing from QA: {sorted(unknown)[:5]}")

    def recall_at(percent: float) -> float:
        if not qa:
            return 0.0
        hits = 0
        for item in qa:
            recs = run.for_query_stage(item.query_id, stage)
            cutoff = max(1, math.ceil(len(recs) * percent / 100.0)) if recs else 0
            if any(contains_answer(unit_text(r.unit_id, r.granularity), item.answers)
                   for r in recs[:cutoff]):
                hits += 1
        return hits / len(qa)

    full = recall_at(100.0)
    points = []
    for percent in percents:
        recall = recall_at(percent)
        drop = 0.0 if full == 0 else (full - recall) / full * 100.0
        points.append(CurvePoint(percent=percent, recall=recall, drop_vs_full=drop))
    return points


@dataclass
class TimingSummary:
    """Mean per-query seconds per stage, shaped like the report tables:
    total first, then the per-stage decomposition in funnel order."""

    stage_means: dict[str, float | None] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return sum(v for v in self.stage_means.values() if v is not None)

    def render(self) -> str:
        parts = "+".join(
            "N/A" if v is None else f"{v:.2f}" for v in self.stage_means.values())
        return f"{self.total:.2f} ({parts})"


def timing_report(per_query_stage_seconds: Sequence[Mapping[str, float]],
                  stages: Sequence[str] = STAGE_ORDER) -> TimingSummary:
    """Average per-stage durations over queries. Stages absent from every
    query render as N/A, matching the funnel report layout."""
    summary = TimingSummary()
    for stage in stages:
        values = [q[stage] for q in per_query_stage_seconds if stage in q]
        summary.stage_means[stage] = (sum(values) / len(values)) if values else None
    return summary
