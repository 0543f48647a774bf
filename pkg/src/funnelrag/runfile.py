"""Run files: ranked retrieval results as TSV, one record per line.

Columns: query_id, unit_id, granularity, rank, score, stage.
`#`-prefixed header lines may carry per-stage mean timings:

    #timing retrieval 0.0123
    query-1<TAB>c-42<TAB>cluster<TAB>1<TAB>3.14<TAB>retrieval

Scores and timings are written with repr precision so a read/write cycle is
the identity. Ids must not contain tabs or newlines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from funnelrag.chunker import Granularity, granularity_from_label

STAGE_RETRIEVAL = "retrieval"
STAGE_PRE_RANK = "pre-rank"
STAGE_POST_RANK = "post-rank"
STAGE_ORDER = (STAGE_RETRIEVAL, STAGE_PRE_RANK, STAGE_POST_RANK)


class RunFileError(ValueError):
    pass


@dataclass(frozen=True)
class RunRecord:
    query_id: str
    unit_id: str
    granularity: Granularity
    rank: int
    score: float
    stage: str


@dataclass
class RunFile:
    records: list[RunRecord] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def queries(self) -> list[str]:
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.query_id)
        return list(seen)

    def stages(self) -> list[str]:
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.stage)
        return list(seen)

    def for_query_stage(self, query_id: str, stage: str) -> list[RunRecord]:
        return [r for r in self.records
                if r.query_id == query_id and r.stage == stage]

    def validate(self) -> None:
        """Ranks consecutive from 1 and scores non-increasing per (query, stage)."""
        groups: dict[tuple[str, str], list[RunRecord]] = {}
        for rec in self.records:
            groups.setdefault((rec.query_id, rec.stage), []).append(rec)
        for (qid, stage), recs in groups.items():
            for i, rec in enumerate(recs, start=1):
                if rec.rank != i:
                    raise RunFileError(
                        f"query {qid!r} stage {stage!r}: rank {rec.rank} at position {i}")
            scores = [r.score for r in recs]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise RunFileError(
                    f"query {qid!r} stage {stage!r}: scores increase with rank")


def write_run(run: RunFile, path: str | Path, include_timings: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# query_id\tunit_id\tgranularity\trank\tscore\tstage\n")
        if include_timings:
            for stage in sorted(run.timings):
                fh.write(f"#timing {stage} {run.timings[stage]!r}\n")
        for rec in run.records:
            fh.write(
                f"{rec.query_id}\t{rec.unit_id}\t{rec.granularity.label}\t"
                f"{rec.rank}\t{rec.score!r}\t{rec.stage}\n")


def read_run(path: str | Path) -> RunFile:
    records: list[RunRecord] = []
    timings: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("#timing"):
                    try:
                        _, stage, seconds = line.split()
                        timings[stage] = float(seconds)
                    except ValueError as exc:
                        raise RunFileError(
                            f"{path}:{lineno}: bad timing line: {line!r}") from exc
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise RunFileError(
                    f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
            qid, uid, gran, rank, score, stage = parts
            try:
                records.append(RunRecord(
                    query_id=qid, unit_id=uid,
                    granularity=granularity_from_label(gran),
                    rank=int(rank), score=float(score), stage=stage))
            except ValueError as exc:
                raise RunFileError(f"{path}:{lineno}: {exc}") from exc
    run = RunFile(records=records, timings=timings)
    run.validate()
    return run
