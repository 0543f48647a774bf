"""Local-to-global score aggregation and ranking-distillation pair export.

Passage-level post-ranking scores are folded up to their documents with a
max/mean mix, documents are split into positives (answer hits plus the
top-aggregated ones) and negatives, and (positive, negative) training pairs
are exported for an external trainer. A reference BPR loss evaluator is
included for verifying that trainer, not for training here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from funnelrag.text import normalize_match

SOURCE_HIT = "hit"
SOURCE_TOP = "top-aggregated"
SOURCE_BOTH = "both"


class DistillError(ValueError):
    pass


@dataclass(frozen=True)
class AggregatedDocScore:
    doc_id: str
    s_max: float
    s_mean: float
    mix_alpha: float

    @property
    def s_agg(self) -> float:
        return self.mix_alpha * self.s_max + (1.0 - self.mix_alpha) * self.s_mean


@dataclass(frozen=True)
class DistillPair:
    query_id: str
    positive_doc: str
    negative_doc: str
    s_pre_pos: float
    s_pre_neg: float
    s_agg_pos: float
    s_agg_neg: float
    positive_source: str


def aggregate_local_to_global(
    passage_scores: Mapping[str, float],
    lineage: Mapping[str, str],
    mix_alpha: float,
) -> list[AggregatedDocScore]:
    """Fold passage scores to documents: alpha*max + (1-alpha)*mean."""
    if not 0.0 <= mix_alpha <= 1.0:
        raise ValueError("mix_alpha must be in [0, 1]")
    per_doc: dict[str, list[float]] = {}
    for passage_id, score in passage_scores.items():
        doc_id = lineage.get(passage_id)
        if doc_id is None:
            raise DistillError(f"passage {passage_id!r} has no document lineage")
        per_doc.setdefault(doc_id, []).append(score)
    return [
        AggregatedDocScore(
            doc_id=doc_id,
            s_max=max(scores),
            s_mean=sum(scores) / len(scores),
            mix_alpha=mix_alpha,
        )
        for doc_id, scores in sorted(per_doc.items())
    ]


def annotate(
    candidates: list[AggregatedDocScore],
    candidate_texts: Mapping[str, str],
    answers: list[str],
    top_k_agg: int,
) -> tuple[list[AggregatedDocScore], list[AggregatedDocScore], dict[str, str]]:
    """Split candidates into positives and negatives.

    Positives are the union of answer hits (normalized substring containment)
    and the top_k_agg candidates by aggregated score. Returns (positives,
    negatives, source-by-doc) where source is hit / top-aggregated / both.
    """
    if top_k_agg < 0:
        raise ValueError("top_k_agg must be >= 0")
    norm_answers = [normalize_match(a) for a in answers if a.strip()]
    hits: set[str] = set()
    for cand in candidates:
        text = normalize_match(candidate_texts.get(cand.doc_id, ""))
        if any(a in text for a in norm_answers):
            hits.add(cand.doc_id)
    by_agg = sorted(candidates, key=lambda c: (-c.s_agg, c.doc_id))
    top = {c.doc_id for c in by_agg[:top_k_agg]}

    sources: dict[str, str] = {}
    for doc_id in hits | top:
        if doc_id in hits and doc_id in top:
            sources[doc_id] = SOURCE_BOTH
        elif doc_id in hits:
            sources[doc_id] = SOURCE_HIT
        else:
            sources[doc_id] = SOURCE_TOP
    positives = [c for c in candidates if c.doc_id in sources]
    negatives = [c for c in candidates if c.doc_id not in sources]
    return positives, negatives, sources


def export_pairs(
    query_id: str,
    positives: list[AggregatedDocScore],
    negatives: list[AggregatedDocScore],
    sources: Mapping[str, str],
    s_pre: Mapping[str, float],
    cap: int | None = 4,
) -> list[DistillPair]:
    """Emit (positive, negative) pairs. `cap=None` gives the full cartesian
    product; otherwise each positive gets its `cap` highest-aggregated
    negatives. Output ordered by (positive id, negative id)."""
    if cap is not None and cap < 1:
        raise ValueError("cap must be >= 1 (or None for all pairs)")
    for cand in list(positives) + list(negatives):
        if cand.doc_id not in s_pre:
            raise DistillError(f"no pre-ranking score for doc {cand.doc_id!r}")

    neg_sorted = sorted(negatives, key=lambda c: (-c.s_agg, c.doc_id))
    pairs = []
    for pos in sorted(positives, key=lambda c: c.doc_id):
        chosen = neg_sorted if cap is None else neg_sorted[:cap]
        for neg in sorted(chosen, key=lambda c: c.doc_id):
            pairs.append(DistillPair(
                query_id=query_id,
                positive_doc=pos.doc_id,
                negative_doc=neg.doc_id,
                s_pre_pos=s_pre[pos.doc_id],
                s_pre_neg=s_pre[neg.doc_id],
                s_agg_pos=pos.s_agg,
                s_agg_neg=neg.s_agg,
                positive_source=sources.get(pos.doc_id, SOURCE_TOP),
            ))
    return pairs


def bpr_loss(pairs: list[DistillPair]) -> float:
    """Summed pairwise loss: -ln(sigmoid(s_pre_pos - s_pre_neg))."""
    if not pairs:
        raise ValueError("bpr_loss needs at least one pair")
    total = 0.0
    for pair in pairs:
        margin = pair.s_pre_pos - pair.s_pre_neg
        if not math.isfinite(margin):
            raise DistillError(
                f"non-finite pre-ranking scores on pair "
                f"({pair.positive_doc!r}, {pair.negative_doc!r})")
        # -ln(sigmoid(m)) = ln(1 + exp(-m)), stable for both signs
        total += math.log1p(math.exp(-margin)) if margin > 0 else -margin + math.log1p(math.exp(margin))
    return total


def bpr_loss_mean(pairs: list[DistillPair]) -> float:
    """Per-pair mean of the summed loss, as a scale-free diagnostic."""
    return bpr_loss(pairs) / len(pairs)


def write_pairs(pairs: list[DistillPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "query_id": p.query_id,
                "pos": p.positive_doc,
                "neg": p.negative_doc,
                "s_pre_pos": p.s_pre_pos,
                "s_pre_neg": p.s_pre_neg,
                "s_agg_pos": p.s_agg_pos,
                "s_agg_neg": p.s_agg_neg,
                "pos_source": p.positive_source,
            }, ensure_ascii=False) + "\n")


def read_pairs(path: str | Path) -> list[DistillPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pairs.append(DistillPair(
                    query_id=str(rec["query_id"]),
                    positive_doc=str(rec["pos"]),
                    negative_doc=str(rec["neg"]),
                    s_pre_pos=float(rec["s_pre_pos"]),
                    s_pre_neg=float(rec["s_pre_neg"]),
                    s_agg_pos=float(rec["s_agg_pos"]),
                    s_agg_neg=float(rec["s_agg_neg"]),
                    positive_source=str(rec["pos_source"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DistillError(f"{path}:{lineno}: malformed pair line: {exc}") from exc
    return pairs
